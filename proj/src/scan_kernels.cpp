#include "smamba/scan_kernels.hpp"

#include <vector>

#include "smamba/runtime.hpp"

namespace smamba::scan {

namespace {

// One chunk of the recurrence starting from state h (C,N), updating it in
// place and emitting y (and h_all when requested).  Shared by the serial
// path (one chunk spanning all of L) and the chunked re-scan; noinline so
// both call the exact same machine code and stay bitwise identical.
template <typename T>
__attribute__((noinline)) void run_span(
    const T* abar, const T* bbar, const T* cseq, const T* x, const T* d,
    T* y, T* h_all, T* h, std::int64_t t0, std::int64_t t1, std::int64_t C,
    std::int64_t N) {
  const std::int64_t CN = C * N;
  for (std::int64_t t = t0; t < t1; ++t) {
    const T* at = abar + t * CN;
    const T* bt = bbar + t * CN;
    const T* ct = cseq + t * N;
    const T* xt = x + t * C;
    T* yt = y + t * C;
    for (std::int64_t c = 0; c < C; ++c) {
      T* hc = h + c * N;
      const T* ac = at + c * N;
      const T* bc = bt + c * N;
      const T xv = xt[c];
      T acc = T(0);
      for (std::int64_t n = 0; n < N; ++n) {
        const T hn = ac[n] * hc[n] + bc[n] * xv;
        hc[n] = hn;
        acc += ct[n] * hn;
      }
      yt[c] = acc + d[c] * xv;
    }
    if (h_all) {
      T* ht = h_all + t * CN;
      for (std::int64_t i = 0; i < CN; ++i) ht[i] = h[i];
    }
  }
}

}  // namespace

template <typename T>
void forward_serial(const T* abar, const T* bbar, const T* cseq, const T* x,
                    const T* d, T* y, T* h_all, std::int64_t L, std::int64_t C,
                    std::int64_t N) {
  std::vector<T> h(static_cast<std::size_t>(C * N), T(0));
  run_span(abar, bbar, cseq, x, d, y, h_all, h.data(), 0, L, C, N);
}

template <typename T>
void forward_chunked(const T* abar, const T* bbar, const T* cseq, const T* x,
                     const T* d, T* y, T* h_all, std::int64_t L,
                     std::int64_t C, std::int64_t N, std::int64_t chunk) {
  if (chunk <= 0 || chunk >= L) {
    forward_serial(abar, bbar, cseq, x, d, y, h_all, L, C, N);
    return;
  }
  const std::int64_t CN = C * N;
  const std::int64_t nchunks = (L + chunk - 1) / chunk;
  // gprod[i] = product of abar over chunk i; part[i] = chunk state from h=0.
  std::vector<T> gprod(static_cast<std::size_t>(nchunks * CN));
  std::vector<T> part(static_cast<std::size_t>(nchunks * CN));

#pragma omp parallel for schedule(static) if (effective_threads() > 1)
  for (std::int64_t i = 0; i < nchunks; ++i) {
    const std::int64_t t0 = i * chunk;
    const std::int64_t t1 = (t0 + chunk < L) ? t0 + chunk : L;
    T* gp = gprod.data() + i * CN;
    T* pp = part.data() + i * CN;
    for (std::int64_t k = 0; k < CN; ++k) {
      gp[k] = T(1);
      pp[k] = T(0);
    }
    for (std::int64_t t = t0; t < t1; ++t) {
      const T* at = abar + t * CN;
      const T* bt = bbar + t * CN;
      const T* xt = x + t * C;
      for (std::int64_t c = 0; c < C; ++c) {
        const T xv = xt[c];
        T* gpc = gp + c * N;
        T* ppc = pp + c * N;
        const T* ac = at + c * N;
        const T* bc = bt + c * N;
        for (std::int64_t n = 0; n < N; ++n) {
          ppc[n] = ac[n] * ppc[n] + bc[n] * xv;
          gpc[n] = gpc[n] * ac[n];
        }
      }
    }
  }

  // Serial combine: entry state of chunk i+1 from chunk i.
  std::vector<T> hin(static_cast<std::size_t>(nchunks * CN), T(0));
  for (std::int64_t i = 0; i + 1 < nchunks; ++i) {
    const T* gp = gprod.data() + i * CN;
    const T* pp = part.data() + i * CN;
    const T* cur = hin.data() + i * CN;
    T* nxt = hin.data() + (i + 1) * CN;
    for (std::int64_t k = 0; k < CN; ++k) nxt[k] = gp[k] * cur[k] + pp[k];
  }

#pragma omp parallel for schedule(static) if (effective_threads() > 1)
  for (std::int64_t i = 0; i < nchunks; ++i) {
    const std::int64_t t0 = i * chunk;
    const std::int64_t t1 = (t0 + chunk < L) ? t0 + chunk : L;
    std::vector<T> h(hin.begin() + i * CN, hin.begin() + (i + 1) * CN);
    run_span(abar, bbar, cseq, x, d, y, h_all, h.data(), t0, t1, C, N);
  }
}

template <typename T>
void backward(const T* abar, const T* bbar, const T* cseq, const T* x,
              const T* d, const T* h_all, const T* gy, T* gabar, T* gbbar,
              T* gcseq, T* gx, T* gd, std::int64_t L, std::int64_t C,
              std::int64_t N) {
  const std::int64_t CN = C * N;
  // gh holds dL/dh[t] while walking t downward.
  std::vector<T> gh(static_cast<std::size_t>(CN), T(0));
  for (std::int64_t t = L - 1; t >= 0; --t) {
    const T* bt = bbar + t * CN;
    const T* ct = cseq + t * N;
    const T* xt = x + t * C;
    const T* ht = h_all + t * CN;
    const T* hprev = (t > 0) ? h_all + (t - 1) * CN : nullptr;
    const T* anext = (t + 1 < L) ? abar + (t + 1) * CN : nullptr;
    const T* gyt = gy + t * C;
    T* gat = gabar + t * CN;
    T* gbt = gbbar + t * CN;
    T* gct = gcseq + t * N;
    for (std::int64_t c = 0; c < C; ++c) {
      const T gyv = gyt[c];
      const T xv = xt[c];
      T* ghc = gh.data() + c * N;
      const T* hc = ht + c * N;
      T gxacc = gyv * d[c];
      for (std::int64_t n = 0; n < N; ++n) {
        // dL/dh[t] = gy[t]*cseq[t] + abar[t+1]*dL/dh[t+1]
        const T carried = anext ? anext[c * N + n] * ghc[n] : T(0);
        const T ghv = gyv * ct[n] + carried;
        ghc[n] = ghv;
        gct[n] += gyv * hc[n];
        gat[c * N + n] += ghv * (hprev ? hprev[c * N + n] : T(0));
        gbt[c * N + n] += ghv * xv;
        gxacc += ghv * bt[c * N + n];
      }
      gx[t * C + c] += gxacc;
      gd[c] += gyv * xv;
    }
  }
}

template void forward_serial<float>(const float*, const float*, const float*,
                                    const float*, const float*, float*, float*,
                                    std::int64_t, std::int64_t, std::int64_t);
template void forward_serial<double>(const double*, const double*,
                                     const double*, const double*,
                                     const double*, double*, double*,
                                     std::int64_t, std::int64_t, std::int64_t);
template void forward_chunked<float>(const float*, const float*, const float*,
                                     const float*, const float*, float*,
                                     float*, std::int64_t, std::int64_t,
                                     std::int64_t, std::int64_t);
template void forward_chunked<double>(const double*, const double*,
                                      const double*, const double*,
                                      const double*, double*, double*,
                                      std::int64_t, std::int64_t, std::int64_t,
                                      std::int64_t);
template void backward<float>(const float*, const float*, const float*,
                              const float*, const float*, const float*,
                              const float*, float*, float*, float*, float*,
                              float*, std::int64_t, std::int64_t,
                              std::int64_t);
template void backward<double>(const double*, const double*, const double*,
                               const double*, const double*, const double*,
                               const double*, double*, double*, double*,
                               double*, double*, std::int64_t, std::int64_t,
                               std::int64_t);

}  // namespace smamba::scan
