#include "prism/numerics.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

namespace prism::numerics {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

RealTensor::RealTensor(Shape s, double fill) : shape(std::move(s)), data(element_count(shape), fill) {}

RealTensor::RealTensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != element_count(shape)) throw std::invalid_argument("RealTensor: data does not match shape");
}

ComplexTensor::ComplexTensor(Shape s)
    : shape(std::move(s)), re(element_count(shape), 0.0), im(element_count(shape), 0.0) {}

ComplexTensor::ComplexTensor(Shape s, std::vector<double> real, std::vector<double> imag)
    : shape(std::move(s)), re(std::move(real)), im(std::move(imag)) {
  const auto n = element_count(shape);
  if (re.size() != n || im.size() != n) throw std::invalid_argument("ComplexTensor: data does not match shape");
}

ComplexTensor ComplexTensor::from_values(const std::vector<std::complex<double>>& values) {
  ComplexTensor t(Shape{values.size()});
  for (std::size_t i = 0; i < values.size(); ++i) t.set(i, values[i]);
  return t;
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw std::domain_error(std::string(what) + ": non-finite value");
  }
}

FftPlan::FftPlan(std::size_t n) : n_(n) {
  if (!is_power_of_two(n)) throw std::invalid_argument("fft length " + std::to_string(n) + " is not a power of two");
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < n) ++bits;
  bitrev_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
    bitrev_[i] = r;
  }
  cos_.resize(n / 2);
  sin_.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    cos_[k] = std::cos(angle);
    sin_[k] = std::sin(angle);
  }
}

void FftPlan::forward(std::span<double> re, std::span<double> im) const { transform(re, im, false); }

void FftPlan::inverse(std::span<double> re, std::span<double> im) const {
  transform(re, im, true);
  const double scale = 1.0 / static_cast<double>(n_);
  for (std::size_t i = 0; i < n_; ++i) {
    re[i] *= scale;
    im[i] *= scale;
  }
}

void FftPlan::transform(std::span<double> re, std::span<double> im, bool inverse) const {
  if (re.size() != n_ || im.size() != n_) throw std::invalid_argument("fft: buffer length does not match plan");
  for (std::size_t i = 0; i < n_; ++i) {
    const auto j = bitrev_[i];
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  // forward twiddle is exp(-2 pi i k / N), inverse uses the conjugate
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n_; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n_ / len;
    for (std::size_t start = 0; start < n_; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const double wr = cos_[k * stride];
        const double wi = sign * sin_[k * stride];
        const std::size_t a = start + k;
        const std::size_t b = a + half;
        const double tr = re[b] * wr - im[b] * wi;
        const double ti = re[b] * wi + im[b] * wr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
      }
    }
  }
}

namespace {

ComplexTensor run_fft(const ComplexTensor& x, bool inverse) {
  if (x.shape.size() != 1) throw std::invalid_argument("fft: expected a rank-1 tensor");
  require_finite(x.re, "fft input");
  require_finite(x.im, "fft input");
  const FftPlan plan(x.size());
  ComplexTensor out = x;
  if (inverse) {
    plan.inverse(out.re, out.im);
  } else {
    plan.forward(out.re, out.im);
  }
  return out;
}

void require_same_shape(const ComplexTensor& a, const ComplexTensor& b, const char* what) {
  if (a.shape != b.shape) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

}  // namespace

ComplexTensor fft(const ComplexTensor& x) { return run_fft(x, false); }

ComplexTensor ifft(const ComplexTensor& x) { return run_fft(x, true); }

PaddedSequence pad_pow2(const ComplexTensor& x, std::complex<double> value) {
  if (x.shape.size() != 1 || x.size() == 0) throw std::invalid_argument("pad_pow2: expected a non-empty rank-1 tensor");
  const auto n = x.size();
  const auto padded = next_power_of_two(n);
  PaddedSequence out{ComplexTensor(Shape{padded}), n};
  for (std::size_t i = 0; i < padded; ++i) out.data.set(i, i < n ? x.at(i) : value);
  return out;
}

ComplexTensor circular_convolve_direct(const ComplexTensor& x, const ComplexTensor& k) {
  if (x.shape.size() != 1 || x.shape != k.shape) throw std::invalid_argument("circular_convolve_direct: length mismatch");
  const auto n = x.size();
  ComplexTensor y(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t m = 0; m < n; ++m) acc += x.at(m) * k.at((i + n - m) % n);
    y.set(i, acc);
  }
  return y;
}

ComplexTensor complex_elementwise(const ComplexTensor& a, const ComplexTensor& b, ElementwiseOp op) {
  require_same_shape(a, b, "complex_elementwise");
  ComplexTensor out(a.shape);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a.at(i);
    const auto y = b.at(i);
    switch (op) {
      case ElementwiseOp::add: out.set(i, x + y); break;
      case ElementwiseOp::mul: out.set(i, x * y); break;
      case ElementwiseOp::conj_mul: out.set(i, x * std::conj(y)); break;
    }
  }
  return out;
}

PolarForm polar(const ComplexTensor& z) {
  PolarForm out{RealTensor(z.shape), RealTensor(z.shape)};
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double re = z.re[i];
    const double im = z.im[i];
    out.modulus[i] = std::hypot(re, im);
    if (re == 0.0 && im == 0.0) {
      out.phase[i] = 0.0;
    } else {
      double p = std::atan2(im, re);
      // atan2 returns -pi for (-x, -0.0); fold onto the closed end of the range
      if (p == -std::numbers::pi) p = std::numbers::pi;
      out.phase[i] = p;
    }
  }
  return out;
}

}  // namespace prism::numerics
