#pragma once

#include <cstdint>

// Raw recurrence kernels:
//
//   h[t,c,n] = abar[t,c,n] * h[t-1,c,n] + bbar[t,c,n] * x[t,c]      (h[-1] = 0)
//   y[t,c]   = sum_n cseq[t,n] * h[t,c,n] + d[c] * x[t,c]
//
// Layouts: abar/bbar (L,C,N), cseq (L,N), x/y (L,C), d (C), h_all (L,C,N).
// The whole file is built with floating-point contraction disabled so the
// serial walk and the chunked restatement execute identical scalar arithmetic
// and can be compared bitwise at chunk == L.
//
// The chunked form runs three passes: per-chunk partial states and running
// abar products (parallel), a serial combine across chunk boundaries, then a
// re-scan of each chunk from its combined entry state (parallel).  Results
// are deterministic for any thread count.

namespace smamba::scan {

// h_all may be nullptr when intermediate states are not needed (inference).
template <typename T>
void forward_serial(const T* abar, const T* bbar, const T* cseq, const T* x,
                    const T* d, T* y, T* h_all, std::int64_t L, std::int64_t C,
                    std::int64_t N);

template <typename T>
void forward_chunked(const T* abar, const T* bbar, const T* cseq, const T* x,
                     const T* d, T* y, T* h_all, std::int64_t L,
                     std::int64_t C, std::int64_t N, std::int64_t chunk);

// Reverse sweep; accumulates (+=) into the g* buffers.  h_all must hold the
// forward states.  Any of gx, gcseq, gd may be used simultaneously; all
// buffers are required.
template <typename T>
void backward(const T* abar, const T* bbar, const T* cseq, const T* x,
              const T* d, const T* h_all, const T* gy, T* gabar, T* gbbar,
              T* gcseq, T* gx, T* gd, std::int64_t L, std::int64_t C,
              std::int64_t N);

}  // namespace smamba::scan
