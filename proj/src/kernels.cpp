#include "dyfn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dyfn/error.hpp"

namespace dyfn::kernels {

namespace {

struct ConvDims {
  std::size_t ci, co, h, w, k, pad;
};

ConvDims check_conv(const Tensor& in, const Tensor& w) {
  require(in.rank() == 3, ErrorKind::InvalidInput,
          "conv2d input must be C x H x W, got " + shape_string(in.shape()));
  require(w.rank() == 4 && w.dim(2) == w.dim(3), ErrorKind::InvalidInput,
          "conv2d kernel must be Co x Ci x k x k, got " + shape_string(w.shape()));
  require(w.dim(2) % 2 == 1, ErrorKind::InvalidInput, "conv2d kernel size must be odd");
  require(w.dim(1) == in.dim(0), ErrorKind::InvalidInput,
          "conv2d channel mismatch: kernel expects " + std::to_string(w.dim(1)) +
              " input channels, got " + std::to_string(in.dim(0)));
  return {in.dim(0), w.dim(0), in.dim(1), in.dim(2), w.dim(2), w.dim(2) / 2};
}

}  // namespace

void configure_threads(int threads) {
#ifdef _OPENMP
  if (threads <= 0) {
    if (const char* env = std::getenv("DYFN_THREADS")) threads = std::atoi(env);
  }
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// Per output element the accumulation order is (ci, ky, kx) in both versions.

Tensor conv2d(const Tensor& in, const Tensor& w) {
  const ConvDims d = check_conv(in, w);
  Tensor out(Shape{d.co, d.h, d.w});
  const double* pin = in.data().data();
  const double* pw = w.data().data();
  double* pout = out.data().data();
  const auto rows = static_cast<std::ptrdiff_t>(d.co * d.h);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t row = 0; row < rows; ++row) {
    const std::size_t o = static_cast<std::size_t>(row) / d.h;
    const std::size_t y = static_cast<std::size_t>(row) % d.h;
    double* acc = pout + (o * d.h + y) * d.w;
    for (std::size_t c = 0; c < d.ci; ++c) {
      for (std::size_t ky = 0; ky < d.k; ++ky) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) -
                                  static_cast<std::ptrdiff_t>(d.pad);
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(d.h)) continue;
        const double* src = pin + (c * d.h + static_cast<std::size_t>(sy)) * d.w;
        for (std::size_t kx = 0; kx < d.k; ++kx) {
          const double wv = pw[((o * d.ci + c) * d.k + ky) * d.k + kx];
          const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) -
                                     static_cast<std::ptrdiff_t>(d.pad);
          const std::size_t x0 = off < 0 ? static_cast<std::size_t>(-off) : 0;
          const std::size_t x1 = off > 0 ? d.w - static_cast<std::size_t>(off) : d.w;
          for (std::size_t x = x0; x < x1; ++x) acc[x] += wv * src[x + off];
        }
      }
    }
  }
  return out;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& w) {
  const std::size_t co = w.dim(0), ci = w.dim(1), k = w.dim(2), pad = k / 2;
  const std::size_t h = grad_out.dim(1), wd = grad_out.dim(2);
  Tensor gin(Shape{ci, h, wd});
  const double* pg = grad_out.data().data();
  const double* pw = w.data().data();
  double* pin = gin.data().data();
  const auto rows = static_cast<std::ptrdiff_t>(ci * h);
  // gin(c, sy, sx) += g(o, y, x) * w(o, c, ky, kx) with sy = y + ky - pad.
  // Accumulation order per element: (o, ky, kx).
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t row = 0; row < rows; ++row) {
    const std::size_t c = static_cast<std::size_t>(row) / h;
    const std::size_t sy = static_cast<std::size_t>(row) % h;
    double* acc = pin + (c * h + sy) * wd;
    for (std::size_t o = 0; o < co; ++o) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(sy + pad) -
                                 static_cast<std::ptrdiff_t>(ky);
        if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
        const double* g = pg + (o * h + static_cast<std::size_t>(y)) * wd;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wv = pw[((o * ci + c) * k + ky) * k + kx];
          // x = sx + pad - kx
          const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(pad) -
                                     static_cast<std::ptrdiff_t>(kx);
          const std::size_t x0 = off < 0 ? static_cast<std::size_t>(-off) : 0;
          const std::size_t x1 = off > 0 ? wd - static_cast<std::size_t>(off) : wd;
          for (std::size_t sx = x0; sx < x1; ++sx) acc[sx] += wv * g[sx + off];
        }
      }
    }
  }
  return gin;
}

Tensor conv2d_grad_kernel(const Tensor& grad_out, const Tensor& in, std::size_t k) {
  const std::size_t co = grad_out.dim(0), ci = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const std::size_t pad = k / 2;
  Tensor gw(Shape{co, ci, k, k});
  const double* pg = grad_out.data().data();
  const double* pin = in.data().data();
  double* pw = gw.data().data();
  const auto taps = static_cast<std::ptrdiff_t>(co * ci * k * k);
  // Accumulation order per element: (y, x).
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < taps; ++t) {
    const std::size_t kx = static_cast<std::size_t>(t) % k;
    const std::size_t ky = (static_cast<std::size_t>(t) / k) % k;
    const std::size_t c = (static_cast<std::size_t>(t) / (k * k)) % ci;
    const std::size_t o = static_cast<std::size_t>(t) / (k * k * ci);
    double acc = 0.0;
    for (std::size_t y = 0; y < h; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) -
                                static_cast<std::ptrdiff_t>(pad);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
      const double* g = pg + (o * h + y) * wd;
      const double* src = pin + (c * h + static_cast<std::size_t>(sy)) * wd;
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) -
                                 static_cast<std::ptrdiff_t>(pad);
      const std::size_t x0 = off < 0 ? static_cast<std::size_t>(-off) : 0;
      const std::size_t x1 = off > 0 ? wd - static_cast<std::size_t>(off) : wd;
      for (std::size_t x = x0; x < x1; ++x) acc += g[x] * src[x + off];
    }
    pw[t] = acc;
  }
  return gw;
}

void channel_stats(const Tensor& f, Tensor& mean, Tensor& stddev) {
  require(f.rank() >= 2, ErrorKind::InvalidInput,
          "channel_stats expects C x ..., got " + shape_string(f.shape()));
  const std::size_t c = f.dim(0);
  const std::size_t n = f.size() / c;
  mean = Tensor(Shape{c});
  stddev = Tensor(Shape{c});
  const double* p = f.data().data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ch = 0; ch < static_cast<std::ptrdiff_t>(c); ++ch) {
    const double* x = p + static_cast<std::size_t>(ch) * n;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    const double m = s / static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (x[i] - m) * (x[i] - m);
    mean[static_cast<std::size_t>(ch)] = m;
    stddev[static_cast<std::size_t>(ch)] = std::sqrt(v / static_cast<double>(n));
  }
}

namespace serial {

Tensor conv2d(const Tensor& in, const Tensor& w) {
  const ConvDims d = check_conv(in, w);
  Tensor out(Shape{d.co, d.h, d.w});
  for (std::size_t o = 0; o < d.co; ++o)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d.ci; ++c)
          for (std::size_t ky = 0; ky < d.k; ++ky)
            for (std::size_t kx = 0; kx < d.k; ++kx) {
              const auto sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(d.pad);
              const auto sx = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(d.pad);
              if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(d.h) ||
                  sx >= static_cast<std::ptrdiff_t>(d.w))
                continue;
              acc += w[((o * d.ci + c) * d.k + ky) * d.k + kx] *
                     in.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
        out.at(o, y, x) = acc;
      }
  return out;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& w) {
  const std::size_t co = w.dim(0), ci = w.dim(1), k = w.dim(2), pad = k / 2;
  const std::size_t h = grad_out.dim(1), wd = grad_out.dim(2);
  Tensor gin(Shape{ci, h, wd});
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t sy = 0; sy < h; ++sy)
      for (std::size_t sx = 0; sx < wd; ++sx) {
        double acc = 0.0;
        for (std::size_t o = 0; o < co; ++o)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const auto y = static_cast<std::ptrdiff_t>(sy + pad) - static_cast<std::ptrdiff_t>(ky);
              const auto x = static_cast<std::ptrdiff_t>(sx + pad) - static_cast<std::ptrdiff_t>(kx);
              if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) ||
                  x >= static_cast<std::ptrdiff_t>(wd))
                continue;
              acc += w[((o * ci + c) * k + ky) * k + kx] *
                     grad_out.at(o, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
            }
        gin.at(c, sy, sx) = acc;
      }
  return gin;
}

Tensor conv2d_grad_kernel(const Tensor& grad_out, const Tensor& in, std::size_t k) {
  const std::size_t co = grad_out.dim(0), ci = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const std::size_t pad = k / 2;
  Tensor gw(Shape{co, ci, k, k});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t c = 0; c < ci; ++c)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          double acc = 0.0;
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < wd; ++x) {
              const auto sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
              const auto sx = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(pad);
              if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(h) ||
                  sx >= static_cast<std::ptrdiff_t>(wd))
                continue;
              acc += grad_out.at(o, y, x) *
                     in.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
          gw[((o * ci + c) * k + ky) * k + kx] = acc;
        }
  return gw;
}

void channel_stats(const Tensor& f, Tensor& mean, Tensor& stddev) {
  const std::size_t c = f.dim(0);
  const std::size_t n = f.size() / c;
  mean = Tensor(Shape{c});
  stddev = Tensor(Shape{c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += f[ch * n + i];
    const double m = s / static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (f[ch * n + i] - m) * (f[ch * n + i] - m);
    mean[ch] = m;
    stddev[ch] = std::sqrt(v / static_cast<double>(n));
  }
}

}  // namespace serial

}  // namespace dyfn::kernels
