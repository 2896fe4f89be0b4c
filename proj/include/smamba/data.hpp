#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "smamba/srt.hpp"
#include "smamba/tensor.hpp"

// Dataset layout: a directory of SRT slices plus manifest.json naming the
// train/test splits, the scale, and each slice's original intensity
// maximum (slices themselves are stored max-normalized to [0,1]).

namespace smamba {

struct SliceRef {
  std::string hr;          // path relative to the manifest directory
  std::string lr;          // empty until the degradation pass ran
  double norm_max = 1.0;
};

struct SlicePair {
  Tensor<double> hr, lr;
  std::int64_t scale = 0;
  double norm_max = 1.0;
};

struct DatasetManifest {
  std::int64_t scale = 2;
  std::vector<SliceRef> train, test;

  void validate() const {
    std::set<std::string> seen;
    for (const auto* split : {&train, &test})
      for (const auto& r : *split) {
        if (r.hr.empty()) throw DataError("manifest: empty slice path");
        if (!seen.insert(r.hr).second)
          throw DataError("manifest: slice '" + r.hr +
                          "' appears in both splits");
      }
    if (scale < 1) throw DataError("manifest: bad scale");
  }

  nlohmann::json to_json() const {
    auto split_json = [](const std::vector<SliceRef>& v) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& r : v) {
        nlohmann::json e;
        e["hr"] = r.hr;
        if (!r.lr.empty()) e["lr"] = r.lr;
        e["norm_max"] = r.norm_max;
        arr.push_back(e);
      }
      return arr;
    };
    nlohmann::json j;
    j["scale"] = scale;
    j["splits"]["train"] = split_json(train);
    j["splits"]["test"] = split_json(test);
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    auto split_refs = [](const nlohmann::json& arr) {
      std::vector<SliceRef> v;
      for (const auto& e : arr) {
        SliceRef r;
        r.hr = e.at("hr").get<std::string>();
        r.lr = e.value("lr", std::string());
        r.norm_max = e.value("norm_max", 1.0);
        v.push_back(std::move(r));
      }
      return v;
    };
    DatasetManifest m;
    m.scale = j.at("scale").get<std::int64_t>();
    m.train = split_refs(j.at("splits").at("train"));
    m.test = split_refs(j.at("splits").at("test"));
    m.validate();
    return m;
  }

  void save(const std::string& path) const {
    validate();
    std::ofstream os(path);
    if (!os) throw DataError("manifest: cannot write " + path);
    os << to_json().dump(2) << "\n";
  }

  static DatasetManifest load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("manifest: cannot open " + path);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest: bad JSON in " + path + ": " + e.what());
    }
    return from_json(j);
  }
};

inline std::string join_path(const std::string& dir, const std::string& rel) {
  if (dir.empty()) return rel;
  return dir.back() == '/' ? dir + rel : dir + "/" + rel;
}

inline SlicePair load_pair(const std::string& dir, const SliceRef& ref,
                           std::int64_t scale, bool need_lr) {
  SlicePair p;
  p.hr = srt_load<double>(join_path(dir, ref.hr));
  p.scale = scale;
  p.norm_max = ref.norm_max;
  if (need_lr) {
    if (ref.lr.empty())
      throw DataError("dataset: slice '" + ref.hr +
                      "' has no low-resolution file; run the degrade step");
    p.lr = srt_load<double>(join_path(dir, ref.lr));
    if (p.lr.ndim() != 3 || p.hr.ndim() != 3 ||
        p.lr.size(0) * scale != p.hr.size(0) ||
        p.lr.size(1) * scale != p.hr.size(1))
      throw DataError("dataset: slice '" + ref.hr +
                      "' extents inconsistent with scale " +
                      std::to_string(scale));
  }
  return p;
}

}  // namespace smamba
