#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "smamba/bicubic.hpp"
#include "smamba/iss2d.hpp"
#include "smamba/ops.hpp"
#include "smamba/srt.hpp"
#include "smamba/ssm.hpp"

// Encoder/decoder assembly: pixel-shuffle upscale head, patch embedding,
// three merge levels plus a bottleneck, symmetric expanding decoder with
// skip fusion, and a final projection added onto a bicubic base image.

namespace smamba {

struct UNetConfig {
  std::int64_t scale = 2;
  std::int64_t patch_size = 2;
  std::vector<std::int64_t> level_channels = {96, 128, 384, 768};
  std::int64_t blocks_per_level = 4;
  std::int64_t state_dim = 16;
  double dropout = 0.3;
  std::int64_t head_channels = 16;
  std::int64_t expansion = 2;  // block inner width = expansion * C
  bool use_iss2d_weights = true;
  bool use_self_prior = true;
  bool use_d_skip = true;
  bool per_direction_params = false;

  void validate() const {
    if (scale != 2 && scale != 4)
      throw DataError("config: scale must be 2 or 4");
    if (patch_size < 1) throw DataError("config: patch_size must be >= 1");
    if (level_channels.size() != 4)
      throw DataError("config: level_channels must list 4 levels");
    for (auto c : level_channels)
      if (c < 4) throw DataError("config: level channels must be >= 4");
    if (level_channels[0] % (patch_size * patch_size) != 0)
      throw DataError(
          "config: first level channels must be divisible by patch_size^2 "
          "so the final expand can undo the patch embedding");
    if (blocks_per_level < 1) throw DataError("config: blocks_per_level >= 1");
    if (state_dim < 1) throw DataError("config: state_dim >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
      throw DataError("config: dropout outside [0,1)");
    if (head_channels < 1) throw DataError("config: head_channels >= 1");
    if (expansion < 1) throw DataError("config: expansion >= 1");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["scale"] = scale;
    j["patch_size"] = patch_size;
    j["level_channels"] = level_channels;
    j["blocks_per_level"] = blocks_per_level;
    j["state_dim"] = state_dim;
    j["dropout"] = dropout;
    j["head_channels"] = head_channels;
    j["expansion"] = expansion;
    j["use_iss2d_weights"] = use_iss2d_weights;
    j["use_self_prior"] = use_self_prior;
    j["use_d_skip"] = use_d_skip;
    j["per_direction_params"] = per_direction_params;
    return j;
  }

  static UNetConfig from_json(const nlohmann::json& j) {
    UNetConfig c;
    c.scale = j.value("scale", c.scale);
    c.patch_size = j.value("patch_size", c.patch_size);
    if (j.contains("level_channels"))
      c.level_channels = j.at("level_channels")
                             .get<std::vector<std::int64_t>>();
    c.blocks_per_level = j.value("blocks_per_level", c.blocks_per_level);
    c.state_dim = j.value("state_dim", c.state_dim);
    c.dropout = j.value("dropout", c.dropout);
    c.head_channels = j.value("head_channels", c.head_channels);
    c.expansion = j.value("expansion", c.expansion);
    c.use_iss2d_weights = j.value("use_iss2d_weights", c.use_iss2d_weights);
    c.use_self_prior = j.value("use_self_prior", c.use_self_prior);
    c.use_d_skip = j.value("use_d_skip", c.use_d_skip);
    c.per_direction_params =
        j.value("per_direction_params", c.per_direction_params);
    return c;
  }

  // nlohmann objects keep keys sorted, so dump() is canonical.
  std::string canonical() const { return to_json().dump(); }
};

// ---------------------------------------------------------------------------
// 2x2 neighborhood concatenation, position-major: output channel p*C + c
// with p enumerating (0,0),(0,1),(1,0),(1,1).

template <typename T>
Tensor<T> neigh_concat(const Tensor<T>& x) {
  if (x.ndim() != 3 || x.size(0) % 2 != 0 || x.size(1) % 2 != 0)
    throw ShapeError("neigh_concat: needs even extents, got " +
                     shape_str(x.shape()));
  const std::int64_t H = x.size(0), W = x.size(1), C = x.size(2);
  const std::int64_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out({Ho, Wo, 4 * C});
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t y = 0; y < Ho; ++y)
    for (std::int64_t xx = 0; xx < Wo; ++xx) {
      T* ovec = po + (y * Wo + xx) * 4 * C;
      for (std::int64_t py = 0; py < 2; ++py)
        for (std::int64_t px2 = 0; px2 < 2; ++px2) {
          const T* ivec = px + ((2 * y + py) * W + (2 * xx + px2)) * C;
          T* slot = ovec + (py * 2 + px2) * C;
          for (std::int64_t c = 0; c < C; ++c) slot[c] = ivec[c];
        }
    }
  if (tracing(x)) {
    mark_output(out);
    Tape<T>::current()->record([x, out, Ho, Wo, W, C]() mutable {
      const T* go = out.grad_data();
      if (!go) return;
      T* g = x.grad_acc();
      for (std::int64_t y = 0; y < Ho; ++y)
        for (std::int64_t xx = 0; xx < Wo; ++xx) {
          const T* ovec = go + (y * Wo + xx) * 4 * C;
          for (std::int64_t py = 0; py < 2; ++py)
            for (std::int64_t px2 = 0; px2 < 2; ++px2) {
              T* ivec = g + ((2 * y + py) * W + (2 * xx + px2)) * C;
              const T* slot = ovec + (py * 2 + px2) * C;
              for (std::int64_t c = 0; c < C; ++c) ivec[c] += slot[c];
            }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// parameter bundles

template <typename T>
struct LinP {
  Tensor<T> w, b;
};

template <typename T>
struct NormP {
  Tensor<T> g, b;
};

template <typename T>
struct BlockP {
  NormP<T> norm1, norm2;
  LinP<T> path_a, path_b, out;
  Tensor<T> dw_w, dw_b;
  SSMParams<T> ssm;
  std::array<SSMParams<T>, 4> ssm_dirs;  // populated when per-direction
  Tensor<T> logits;
  Tensor<T> d_zero;  // untracked zeros, substituted when the skip is off
};

// u = norm1(grid); gate path a; conv/scan path b; gated product, projection,
// dropout, residual.
template <typename T>
Tensor<T> vision_mamba_block(const Tensor<T>& grid, const BlockP<T>& blk,
                             const UNetConfig& cfg, bool training,
                             Rng* drng) {
  Tensor<T> u = layer_norm(grid, blk.norm1.g, blk.norm1.b);
  Tensor<T> pa = linear(u, blk.path_a.w, blk.path_a.b);
  Tensor<T> pb = linear(u, blk.path_b.w, blk.path_b.b);
  pb = dwconv2d(pb, blk.dw_w, blk.dw_b, 1, 1);
  pb = silu(pb);
  const Tensor<T>* dov = cfg.use_d_skip ? nullptr : &blk.d_zero;
  pb = cfg.per_direction_params
           ? iss2d_forward_multi(pb, blk.ssm_dirs, blk.logits, dov)
           : iss2d_forward(pb, blk.ssm, blk.logits, dov);
  pb = layer_norm(pb, blk.norm2.g, blk.norm2.b);
  Tensor<T> gated = mul(silu(pa), pb);
  Tensor<T> o = linear(gated, blk.out.w, blk.out.b);
  if (training && cfg.dropout > 0.0) o = dropout(o, cfg.dropout, true, *drng);
  return add(grid, o);
}

// ---------------------------------------------------------------------------

template <typename T>
class Model {
 public:
  UNetConfig cfg;

  Tensor<T> head_w, head_b;
  Tensor<T> embed_w, embed_b;
  std::vector<std::vector<BlockP<T>>> enc;  // [3][blocks]
  std::vector<NormP<T>> merge_norm;         // [3]
  std::vector<LinP<T>> merge_lin;           // [3]
  std::vector<BlockP<T>> mid;               // bottleneck blocks
  std::vector<LinP<T>> expand_lin;          // [3], level l+1 -> l
  std::vector<LinP<T>> fuse_lin;            // [3]
  std::vector<std::vector<BlockP<T>>> dec;  // [3][blocks]
  LinP<T> final_expand;
  Tensor<T> final_w, final_b;

  // (name, tensor) in deterministic construction order; learnables only.
  std::vector<std::pair<std::string, Tensor<T>>> registry;

  Model(UNetConfig c, std::uint64_t seed) : cfg(std::move(c)) {
    cfg.validate();
    Rng rng(seed, 1);
    const auto& ch = cfg.level_channels;
    const std::int64_t E = cfg.head_channels;
    const std::int64_t s2 = cfg.scale * cfg.scale;
    head_w = uinit({3, 3, 1, E * s2}, 9.0, rng);
    head_b = Tensor<T>::zeros({E * s2});
    embed_w = uinit({cfg.patch_size, cfg.patch_size, E, ch[0]},
                    double(cfg.patch_size * cfg.patch_size * E), rng);
    embed_b = Tensor<T>::zeros({ch[0]});
    enc.resize(3);
    for (int l = 0; l < 3; ++l) {
      for (std::int64_t i = 0; i < cfg.blocks_per_level; ++i)
        enc[l].push_back(make_block(ch[l], rng));
      merge_norm.push_back(
          {Tensor<T>::full({4 * ch[l]}, T(1)), Tensor<T>::zeros({4 * ch[l]})});
      merge_lin.push_back({uinit({4 * ch[l], ch[l + 1]}, double(4 * ch[l]),
                                 rng),
                           Tensor<T>::zeros({ch[l + 1]})});
    }
    for (std::int64_t i = 0; i < cfg.blocks_per_level; ++i)
      mid.push_back(make_block(ch[3], rng));
    expand_lin.resize(3);
    fuse_lin.resize(3);
    dec.resize(3);
    for (int l = 2; l >= 0; --l) {
      expand_lin[l] = {uinit({ch[l + 1], 4 * ch[l]}, double(ch[l + 1]), rng),
                       Tensor<T>::zeros({4 * ch[l]})};
      fuse_lin[l] = {uinit({2 * ch[l], ch[l]}, double(2 * ch[l]), rng),
                     Tensor<T>::zeros({ch[l]})};
      for (std::int64_t i = 0; i < cfg.blocks_per_level; ++i)
        dec[l].push_back(make_block(ch[l], rng));
    }
    final_expand = {uinit({ch[0], ch[0]}, double(ch[0]), rng),
                    Tensor<T>::zeros({ch[0]})};
    // Zero init keeps the network an exact bicubic identity at step 0.
    const std::int64_t p2 = cfg.patch_size * cfg.patch_size;
    final_w = Tensor<T>::zeros({3, 3, ch[0] / p2, 1});
    final_b = Tensor<T>::zeros({1});
    build_registry();
    for (auto& [name, t] : registry) t.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& lr, bool training,
                    Rng* drng = nullptr) const {
    if (lr.ndim() != 3 || lr.size(2) != 1)
      throw ShapeError("forward: expected (h,w,1) image, got " +
                       shape_str(lr.shape()));
    const std::int64_t H = lr.size(0) * cfg.scale;
    const std::int64_t W = lr.size(1) * cfg.scale;
    const std::int64_t div = cfg.patch_size * 8;
    if (H % div != 0 || W % div != 0)
      throw DataError("forward: upscaled extents " + std::to_string(H) + "x" +
                      std::to_string(W) + " must be divisible by " +
                      std::to_string(div) +
                      " (patch embedding plus three 2x merges)");
    Tensor<T> hf =
        pixel_shuffle(conv2d(lr, head_w, head_b, 1, 1), cfg.scale);
    Tensor<T> g = conv2d(hf, embed_w, embed_b, cfg.patch_size, 0);
    std::array<Tensor<T>, 3> skips;
    for (int l = 0; l < 3; ++l) {
      for (const auto& blk : enc[l])
        g = vision_mamba_block(g, blk, cfg, training, drng);
      skips[l] = g;
      Tensor<T> nc = neigh_concat(g);
      nc = layer_norm(nc, merge_norm[l].g, merge_norm[l].b);
      g = linear(nc, merge_lin[l].w, merge_lin[l].b);
    }
    for (const auto& blk : mid)
      g = vision_mamba_block(g, blk, cfg, training, drng);
    for (int l = 2; l >= 0; --l) {
      g = pixel_shuffle(linear(g, expand_lin[l].w, expand_lin[l].b), 2);
      g = linear(concat(g, skips[l], 2), fuse_lin[l].w, fuse_lin[l].b);
      for (const auto& blk : dec[l])
        g = vision_mamba_block(g, blk, cfg, training, drng);
    }
    Tensor<T> fe = linear(g, final_expand.w, final_expand.b);
    if (cfg.patch_size > 1) fe = pixel_shuffle(fe, cfg.patch_size);
    Tensor<T> delta = conv2d(fe, final_w, final_b, 1, 1);
    Tensor<T> sr = add(delta, bicubic_upscale(lr, cfg.scale));
    if (!training) sr = clip(sr, T(0), T(1));
    return sr;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : registry) n += t.numel();
    return n;
  }

  // Totals grouped by the name prefix before the first dot.
  std::vector<std::pair<std::string, std::int64_t>> param_breakdown() const {
    std::vector<std::pair<std::string, std::int64_t>> groups;
    for (const auto& [name, t] : registry) {
      const std::string g = name.substr(0, name.find('.'));
      if (groups.empty() || groups.back().first != g)
        groups.emplace_back(g, 0);
      groups.back().second += t.numel();
    }
    return groups;
  }

  void zero_grads() {
    for (auto& [name, t] : registry) t.zero_grad();
  }

 private:
  static Tensor<T> uinit(Shape s, double fan_in, Rng& rng) {
    Tensor<T> t(std::move(s));
    const double bound = 1.0 / std::sqrt(fan_in);
    T* p = t.data();
    const std::int64_t n = t.numel();
    for (std::int64_t i = 0; i < n; ++i)
      p[i] = T(rng.uniform(-bound, bound));
    return t;
  }

  BlockP<T> make_block(std::int64_t C, Rng& rng) {
    const std::int64_t Ce = cfg.expansion * C;
    BlockP<T> b;
    b.norm1 = {Tensor<T>::full({C}, T(1)), Tensor<T>::zeros({C})};
    b.path_a = {uinit({C, Ce}, double(C), rng), Tensor<T>::zeros({Ce})};
    b.path_b = {uinit({C, Ce}, double(C), rng), Tensor<T>::zeros({Ce})};
    b.dw_w = uinit({3, 3, Ce}, 9.0, rng);
    b.dw_b = Tensor<T>::zeros({Ce});
    if (cfg.per_direction_params) {
      for (int d = 0; d < 4; ++d)
        b.ssm_dirs[d] = ssm_init<T>(Ce, cfg.state_dim, rng);
    } else {
      b.ssm = ssm_init<T>(Ce, cfg.state_dim, rng);
    }
    b.norm2 = {Tensor<T>::full({Ce}, T(1)), Tensor<T>::zeros({Ce})};
    b.out = {uinit({Ce, C}, double(Ce), rng), Tensor<T>::zeros({C})};
    b.logits = Tensor<T>::zeros({4});
    b.d_zero = Tensor<T>::zeros({Ce});
    return b;
  }

  void reg(const std::string& name, const Tensor<T>& t) {
    registry.emplace_back(name, t);
  }

  void reg_ssm(const std::string& p, const SSMParams<T>& s) {
    reg(p + ".a_log", s.a_log);
    if (cfg.use_d_skip) reg(p + ".d", s.d_skip);
    reg(p + ".wd.w", s.w_delta_w);
    reg(p + ".wd.b", s.w_delta_b);
    reg(p + ".wb", s.w_b);
    reg(p + ".wc", s.w_c);
  }

  void reg_block(const std::string& p, const BlockP<T>& b) {
    reg(p + ".norm1.g", b.norm1.g);
    reg(p + ".norm1.b", b.norm1.b);
    reg(p + ".path_a.w", b.path_a.w);
    reg(p + ".path_a.b", b.path_a.b);
    reg(p + ".path_b.w", b.path_b.w);
    reg(p + ".path_b.b", b.path_b.b);
    reg(p + ".dw.w", b.dw_w);
    reg(p + ".dw.b", b.dw_b);
    if (cfg.per_direction_params) {
      for (int d = 0; d < 4; ++d)
        reg_ssm(p + ".ssm" + std::to_string(d), b.ssm_dirs[d]);
    } else {
      reg_ssm(p + ".ssm", b.ssm);
    }
    reg(p + ".norm2.g", b.norm2.g);
    reg(p + ".norm2.b", b.norm2.b);
    reg(p + ".out.w", b.out.w);
    reg(p + ".out.b", b.out.b);
    if (cfg.use_iss2d_weights) reg(p + ".fusion.logits", b.logits);
  }

  void build_registry() {
    reg("head.conv.w", head_w);
    reg("head.conv.b", head_b);
    reg("embed.conv.w", embed_w);
    reg("embed.conv.b", embed_b);
    for (int l = 0; l < 3; ++l) {
      const std::string lp = "enc" + std::to_string(l);
      for (std::size_t i = 0; i < enc[l].size(); ++i)
        reg_block(lp + ".block" + std::to_string(i), enc[l][i]);
      reg(lp + ".merge.norm.g", merge_norm[l].g);
      reg(lp + ".merge.norm.b", merge_norm[l].b);
      reg(lp + ".merge.lin.w", merge_lin[l].w);
      reg(lp + ".merge.lin.b", merge_lin[l].b);
    }
    for (std::size_t i = 0; i < mid.size(); ++i)
      reg_block("bottleneck.block" + std::to_string(i), mid[i]);
    for (int l = 2; l >= 0; --l) {
      const std::string lp = "dec" + std::to_string(l);
      reg(lp + ".expand.w", expand_lin[l].w);
      reg(lp + ".expand.b", expand_lin[l].b);
      reg(lp + ".fuse.w", fuse_lin[l].w);
      reg(lp + ".fuse.b", fuse_lin[l].b);
      for (std::size_t i = 0; i < dec[l].size(); ++i)
        reg_block(lp + ".block" + std::to_string(i), dec[l][i]);
    }
    reg("final.expand.w", final_expand.w);
    reg("final.expand.b", final_expand.b);
    reg("final.conv.w", final_w);
    reg("final.conv.b", final_b);
  }
};

// ---------------------------------------------------------------------------
// checkpoints: magic, format version, canonical config JSON, then the named
// registry as SRT blobs in registry order.

inline constexpr char kCheckpointMagic[4] = {'S', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open for write: " + path);
  os.write(kCheckpointMagic, 4);
  detail::put_u32le(os, kCheckpointVersion);
  const std::string js = m.cfg.canonical();
  detail::put_u64le(os, js.size());
  os.write(js.data(), static_cast<std::streamsize>(js.size()));
  detail::put_u32le(os, static_cast<std::uint32_t>(m.registry.size()));
  for (const auto& [name, t] : m.registry) {
    if (name.size() > 0xffff) throw DataError("checkpoint: name too long");
    const std::uint16_t len = static_cast<std::uint16_t>(name.size());
    os.put(static_cast<char>(len & 0xff));
    os.put(static_cast<char>(len >> 8));
    os.write(name.data(), len);
    srt_write(os, t);
  }
  if (!os) throw DataError("checkpoint: write failed: " + path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kCheckpointMagic, 4))
    throw DataError("checkpoint: bad magic in " + path);
  const std::uint32_t version = detail::get_u32le(is);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " +
                    std::to_string(version));
  const std::uint64_t jlen = detail::get_u64le(is);
  std::string js(jlen, '\0');
  is.read(js.data(), static_cast<std::streamsize>(jlen));
  if (!is) throw DataError("checkpoint: truncated header");
  UNetConfig cfg = UNetConfig::from_json(nlohmann::json::parse(js));
  Model<T> m(cfg, 0);
  std::map<std::string, Tensor<T>> by_name(m.registry.begin(),
                                           m.registry.end());
  const std::uint32_t count = detail::get_u32le(is);
  if (count != m.registry.size())
    throw DataError("checkpoint: holds " + std::to_string(count) +
                    " tensors, config implies " +
                    std::to_string(m.registry.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const int lo = is.get(), hi = is.get();
    if (lo < 0 || hi < 0) throw DataError("checkpoint: truncated entry");
    std::string name(static_cast<std::size_t>(lo | (hi << 8)), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    Tensor<T> t = srt_read<T>(is);
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw DataError("checkpoint: unknown tensor '" + name + "'");
    if (it->second.shape() != t.shape())
      throw DataError("checkpoint: tensor '" + name + "' has shape " +
                      shape_str(t.shape()) + ", expected " +
                      shape_str(it->second.shape()));
    std::copy(t.data(), t.data() + t.numel(), it->second.data());
  }
  return m;
}

}  // namespace smamba
