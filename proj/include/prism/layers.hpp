#pragma once

// Harmonic sequence primitives (harmonic embedding, ModReLU, spectral gate,
// FFT global convolution), the attention baseline, and the complex-to-real
// bridge.
//
// Every primitive has two entry points: a pure forward over numerics tensors
// (used by tests and the benchmark) and a tape op over autodiff::Var that
// calls the same kernel and adds the backward pass. Batched tape activations
// are row-major [rows, channels]; rows enumerate (sequence, position) for a
// SeqLayout. Complex activations are planar [2, rows, channels].

#include <cstddef>
#include <span>
#include <vector>

#include "prism/autodiff.hpp"
#include "prism/numerics.hpp"

namespace prism::layers {

using autodiff::Tape;
using autodiff::Var;
using numerics::ComplexTensor;
using numerics::RealTensor;

/// B sequences padded to a common length; row index = b * length + t.
struct SeqLayout {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::size_t> valid;

  std::size_t rows() const { return batch * length; }
  static SeqLayout single(std::size_t n) { return {1, n, {n}}; }
};

// ---------------------------------------------------------------------------
// Harmonic embedding

/// omega_j = omega_max * ratio^(j / (d - 1)); strictly decreasing for d > 1.
std::vector<double> harmonic_frequencies(std::size_t d, double omega_max = 1.0, double ratio = 1e-4);

struct HarmonicEmbeddingTable {
  RealTensor amplitudes;           // [V, d], learnable
  std::vector<double> frequencies;  // [d], fixed

  std::size_t vocab() const { return amplitudes.shape.at(0); }
  std::size_t dim() const { return amplitudes.shape.at(1); }
};

/// H[t, j] = A[token_t, j] * exp(i * omega_j * t).
ComplexTensor harmonic_embed(std::span<const int> tokens, const HarmonicEmbeddingTable& table);

Var harmonic_embed(Tape& t, Var amplitudes, std::span<const int> ids, const SeqLayout& layout,
                   std::span<const double> frequencies, double scale);

// ---------------------------------------------------------------------------
// ModReLU: ReLU(|z| + b) * z / |z|, zero at z = 0 and in the dead region.

ComplexTensor modrelu(const ComplexTensor& z, std::span<const double> bias);
Var modrelu(Tape& t, Var z, Var bias);

// ---------------------------------------------------------------------------
// Spectral gate: z * sigmoid([Re z || Im z] W + g), one real gate per channel.

struct SpectralGateParams {
  RealTensor weight;  // [2d, d]
  RealTensor bias;    // [d]
};

ComplexTensor spectral_gate(const ComplexTensor& z, const SpectralGateParams& params);
Var spectral_gate(Tape& t, Var z, Var weight, Var bias);

// ---------------------------------------------------------------------------
// Global harmonic convolution: per channel, ifft(fft(pad(x)) * K[j]).

struct GlobalKernel {
  ComplexTensor spectrum;  // [d, L_pad]

  std::size_t channels() const { return spectrum.shape.at(0); }
  std::size_t padded_length() const { return spectrum.shape.at(1); }
};

/// X is [N, d] with N <= L_pad. Rows at or beyond valid_len are treated as
/// zero on input and returned as zero.
ComplexTensor ghc_forward(const ComplexTensor& x, const GlobalKernel& kernel, std::size_t valid_len);

/// kernel is planar [2, d, L_pad].
Var ghc(Tape& t, Var z, Var kernel, const SeqLayout& layout);

// ---------------------------------------------------------------------------
// Phase-preserving RMS normalization: z / sqrt(mean_j |z_j|^2 + eps) per row.

Var complex_rms_norm(Tape& t, Var z, double eps = 1e-6);

/// Complex matrix product z W with planar weight [2, d_in, d_out].
Var complex_linear(Tape& t, Var z, Var weight);

/// [2, rows, d] -> [rows, 2d] as [Re || Im] per row.
Var complex_features(Tape& t, Var z);

// ---------------------------------------------------------------------------
// Real layers

Var linear(Tape& t, Var x, Var weight, Var bias = {});
/// x W^T for a weight stored as [d_out, d_in] (tied output projection).
Var linear_transposed(Tape& t, Var x, Var weight);
Var embedding(Tape& t, Var table, std::span<const int> ids, double scale);
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);
Var relu(Tape& t, Var x);
/// Mean cross-entropy over rows whose target is >= 0.
Var cross_entropy(Tape& t, Var logits, std::span<const int> targets);

struct AttentionShape {
  std::size_t heads = 1;
  SeqLayout queries;
  SeqLayout keys;
  bool causal = false;
};

/// softmax(Q K^T / sqrt(d / h)) V per head; keys beyond each sequence's valid
/// length are masked, and with causal masking key j > query i is masked too.
Var attention(Tape& t, Var q, Var k, Var v, const AttentionShape& shape);

struct AttentionParams {
  RealTensor wq, wk, wv, wo;  // [d, d]
  std::size_t heads = 1;
};

enum class Mask { none, causal };

RealTensor mhsa_forward(const RealTensor& x, const AttentionParams& params, Mask mask);
/// Per-head attention weights [heads, N, N] of mhsa_forward.
RealTensor mhsa_weights(const RealTensor& x, const AttentionParams& params, Mask mask);

struct BridgeParams {
  RealTensor weight;  // [2d, d]
  RealTensor bias;    // [d]; may be empty for a bias-free bridge
};

RealTensor bridge(const ComplexTensor& z, const BridgeParams& params);

}  // namespace prism::layers
