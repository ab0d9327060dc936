#pragma once

// Dense real/complex arrays and the FFT machinery used by the harmonic layers.
//
// Complex data is stored planar (separate real and imaginary buffers). The
// FFT is unnormalized in the forward direction and scaled by 1/N on the way
// back, so ifft(fft(x) * fft(k)) is the circular convolution of x and k.

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace prism::numerics {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);

struct RealTensor {
  Shape shape;
  std::vector<double> data;

  RealTensor() = default;
  explicit RealTensor(Shape s, double fill = 0.0);
  RealTensor(Shape s, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

struct ComplexTensor {
  Shape shape;
  std::vector<double> re;
  std::vector<double> im;

  ComplexTensor() = default;
  explicit ComplexTensor(Shape s);
  ComplexTensor(Shape s, std::vector<double> real, std::vector<double> imag);
  static ComplexTensor from_values(const std::vector<std::complex<double>>& values);

  std::size_t size() const { return re.size(); }
  std::complex<double> at(std::size_t i) const { return {re[i], im[i]}; }
  void set(std::size_t i, std::complex<double> v) {
    re[i] = v.real();
    im[i] = v.imag();
  }
};

bool is_power_of_two(std::size_t n);
std::size_t next_power_of_two(std::size_t n);

/// Iterative radix-2 transform with twiddles precomputed for one length.
/// Immutable after construction, so one plan can be shared across threads.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n);

  std::size_t size() const { return n_; }

  // In place over planar buffers of length size().
  void forward(std::span<double> re, std::span<double> im) const;
  void inverse(std::span<double> re, std::span<double> im) const;

 private:
  void transform(std::span<double> re, std::span<double> im, bool inverse) const;

  std::size_t n_;
  std::vector<std::size_t> bitrev_;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

// Throws std::invalid_argument for non-power-of-two lengths and
// std::domain_error for NaN/Inf input. Rank-1 tensors only.
ComplexTensor fft(const ComplexTensor& x);
ComplexTensor ifft(const ComplexTensor& x);

struct PaddedSequence {
  ComplexTensor data;
  std::size_t original_length = 0;
};

PaddedSequence pad_pow2(const ComplexTensor& x, std::complex<double> value = {0.0, 0.0});

/// O(N^2) reference: y[n] = sum_m x[m] k[(n - m) mod N].
ComplexTensor circular_convolve_direct(const ComplexTensor& x, const ComplexTensor& k);

enum class ElementwiseOp { add, mul, conj_mul };

ComplexTensor complex_elementwise(const ComplexTensor& a, const ComplexTensor& b, ElementwiseOp op);

struct PolarForm {
  RealTensor modulus;
  RealTensor phase;
};

/// Phase lies in (-pi, pi]; the phase of an exact zero is 0.
PolarForm polar(const ComplexTensor& z);

void require_finite(std::span<const double> values, const char* what);

}  // namespace prism::numerics
