#include "prism/layers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

namespace prism::layers {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using Stride = Eigen::OuterStride<>;
using SMapR = Eigen::Map<MatR, 0, Stride>;
using CSMapR = Eigen::Map<const MatR, 0, Stride>;
using numerics::Shape;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ----- ModReLU kernel --------------------------------------------------------

void modrelu_kernel(const double* zr, const double* zi, std::size_t rows, std::size_t channels,
                    std::span<const double> bias, double* out_r, double* out_i) {
  const bool scalar_bias = bias.size() == 1;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < channels; ++j) {
      const std::size_t i = r * channels + j;
      const double b = scalar_bias ? bias[0] : bias[j];
      const double m = std::hypot(zr[i], zi[i]);
      if (m == 0.0 || m + b <= 0.0) {
        out_r[i] = 0.0;
        out_i[i] = 0.0;
      } else {
        const double s = (m + b) / m;
        out_r[i] = s * zr[i];
        out_i[i] = s * zi[i];
      }
    }
  }
}

// ----- spectral gate kernel ---------------------------------------------------

// Returns the gate values sigma(pre) as [rows, d].
MatR gate_values(const double* zr, const double* zi, std::size_t rows, std::size_t d, const double* weight,
                 const double* bias) {
  CMapR re(zr, rows, d);
  CMapR im(zi, rows, d);
  CMapR w(weight, 2 * d, d);
  MatR pre = re * w.topRows(d) + im * w.bottomRows(d);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) pre(r, j) = sigmoid(pre(r, j) + bias[j]);
  }
  return pre;
}

// ----- global convolution kernel ----------------------------------------------

struct GhcSaved {
  // fft of the zero-padded, masked input per (sequence, channel): [B, d, L]
  std::vector<double> spec_re;
  std::vector<double> spec_im;
};

void ghc_kernel(const double* zr, const double* zi, const SeqLayout& layout, std::size_t d, const double* k_re,
                const double* k_im, std::size_t l_pad, double* out_r, double* out_i, GhcSaved* saved) {
  const numerics::FftPlan plan(l_pad);
  const std::size_t n = layout.length;
  // channels are gathered a cache line at a time; rows are d doubles apart
  constexpr std::size_t kBlock = 8;
  std::vector<double> bre(kBlock * l_pad), bim(kBlock * l_pad);
  if (saved != nullptr) {
    saved->spec_re.assign(layout.batch * d * l_pad, 0.0);
    saved->spec_im.assign(layout.batch * d * l_pad, 0.0);
  }
  for (std::size_t b = 0; b < layout.batch; ++b) {
    const std::size_t valid = layout.valid[b];
    for (std::size_t j0 = 0; j0 < d; j0 += kBlock) {
      const std::size_t width = std::min(kBlock, d - j0);
      std::fill(bre.begin(), bre.end(), 0.0);
      std::fill(bim.begin(), bim.end(), 0.0);
      for (std::size_t t = 0; t < valid; ++t) {
        const std::size_t row = (b * n + t) * d + j0;
        for (std::size_t c = 0; c < width; ++c) {
          bre[c * l_pad + t] = zr[row + c];
          bim[c * l_pad + t] = zi[row + c];
        }
      }
      for (std::size_t c = 0; c < width; ++c) {
        const std::size_t j = j0 + c;
        const std::span<double> br(bre.data() + c * l_pad, l_pad);
        const std::span<double> bi(bim.data() + c * l_pad, l_pad);
        plan.forward(br, bi);
        if (saved != nullptr) {
          std::copy(br.begin(), br.end(), saved->spec_re.begin() + (b * d + j) * l_pad);
          std::copy(bi.begin(), bi.end(), saved->spec_im.begin() + (b * d + j) * l_pad);
        }
        const double* kr = k_re + j * l_pad;
        const double* ki = k_im + j * l_pad;
        for (std::size_t f = 0; f < l_pad; ++f) {
          const double xr = br[f];
          const double xi = bi[f];
          br[f] = xr * kr[f] - xi * ki[f];
          bi[f] = xr * ki[f] + xi * kr[f];
        }
        plan.inverse(br, bi);
      }
      for (std::size_t t = 0; t < n; ++t) {
        const std::size_t row = (b * n + t) * d + j0;
        for (std::size_t c = 0; c < width; ++c) {
          out_r[row + c] = t < valid ? bre[c * l_pad + t] : 0.0;
          out_i[row + c] = t < valid ? bim[c * l_pad + t] : 0.0;
        }
      }
    }
  }
}

// ----- attention kernel ---------------------------------------------------------

// Writes outputs for all heads; probabilities are stored as [B, h, Nq, Nk]
// when `probs` is non-null.
void attention_kernel(const double* q, const double* k, const double* v, const AttentionShape& shape,
                      std::size_t d, double* out, std::vector<double>* probs) {
  const std::size_t h = shape.heads;
  const std::size_t dh = d / h;
  const std::size_t nq = shape.queries.length;
  const std::size_t nk = shape.keys.length;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (probs != nullptr) probs->assign(shape.queries.batch * h * nq * nk, 0.0);
  MatR s(nq, nk);
  for (std::size_t b = 0; b < shape.queries.batch; ++b) {
    const std::size_t valid_k = shape.keys.valid[b];
    for (std::size_t head = 0; head < h; ++head) {
      CSMapR qh(q + b * nq * d + head * dh, nq, dh, Stride(d));
      CSMapR kh(k + b * nk * d + head * dh, nk, dh, Stride(d));
      CSMapR vh(v + b * nk * d + head * dh, nk, dh, Stride(d));
      s.noalias() = (qh * kh.transpose()) * scale;
      for (std::size_t i = 0; i < nq; ++i) {
        std::size_t limit = valid_k;
        if (shape.causal) limit = std::min(limit, i + 1);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, s(i, j));
        double total = 0.0;
        for (std::size_t j = 0; j < nk; ++j) {
          const double e = j < limit ? std::exp(s(i, j) - mx) : 0.0;
          s(i, j) = e;
          total += e;
        }
        s.row(i) /= total;
      }
      SMapR oh(out + b * nq * d + head * dh, nq, dh, Stride(d));
      oh.noalias() = s * vh;
      if (probs != nullptr) {
        std::copy(s.data(), s.data() + nq * nk, probs->begin() + ((b * h + head) * nq) * nk);
      }
    }
  }
}

void check_layout(const SeqLayout& layout, std::size_t rows, const char* what) {
  require(layout.valid.size() == layout.batch, std::string(what) + ": layout valid lengths do not match batch");
  require(layout.rows() == rows, std::string(what) + ": layout does not match tensor rows");
  for (auto v : layout.valid) require(v <= layout.length, std::string(what) + ": valid length exceeds padded length");
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<double> harmonic_frequencies(std::size_t d, double omega_max, double ratio) {
  require(d >= 1, "harmonic_frequencies: d must be positive");
  std::vector<double> w(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double expo = d == 1 ? 0.0 : static_cast<double>(j) / static_cast<double>(d - 1);
    w[j] = omega_max * std::pow(ratio, expo);
  }
  return w;
}

ComplexTensor harmonic_embed(std::span<const int> tokens, const HarmonicEmbeddingTable& table) {
  const std::size_t v = table.vocab();
  const std::size_t d = table.dim();
  require(table.frequencies.size() == d, "harmonic_embed: frequency vector does not match table width");
  ComplexTensor out(Shape{tokens.size(), d});
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const int tok = tokens[t];
    if (tok < 0 || static_cast<std::size_t>(tok) >= v) {
      throw std::out_of_range("harmonic_embed: token id " + std::to_string(tok) + " out of range");
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double a = table.amplitudes[static_cast<std::size_t>(tok) * d + j];
      const double angle = table.frequencies[j] * static_cast<double>(t);
      out.re[t * d + j] = a * std::cos(angle);
      out.im[t * d + j] = a * std::sin(angle);
    }
  }
  return out;
}

Var harmonic_embed(Tape& t, Var amplitudes, std::span<const int> ids, const SeqLayout& layout,
                   std::span<const double> frequencies, double scale) {
  const auto& table = t.value(amplitudes);
  const std::size_t v = table.shape.at(0);
  const std::size_t d = table.shape.at(1);
  require(frequencies.size() == d, "harmonic_embed: frequency vector does not match table width");
  check_layout(layout, ids.size(), "harmonic_embed");
  const std::size_t rows = ids.size();
  RealTensor out(Shape{2, rows, d});
  auto cos_t = std::make_shared<std::vector<double>>(rows * d, 0.0);
  auto sin_t = std::make_shared<std::vector<double>>(rows * d, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t pos = r % layout.length;
    if (pos >= layout.valid[r / layout.length]) continue;
    const int tok = ids[r];
    if (tok < 0 || static_cast<std::size_t>(tok) >= v) {
      throw std::out_of_range("harmonic_embed: token id " + std::to_string(tok) + " out of range");
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double angle = frequencies[j] * static_cast<double>(pos);
      const double c = scale * std::cos(angle);
      const double s = scale * std::sin(angle);
      (*cos_t)[r * d + j] = c;
      (*sin_t)[r * d + j] = s;
      const double a = table[static_cast<std::size_t>(tok) * d + j];
      out[r * d + j] = a * c;
      out[rows * d + r * d + j] = a * s;
    }
  }
  std::vector<int> id_copy(ids.begin(), ids.end());
  return t.push(std::move(out), {amplitudes.id},
                [amplitudes, id_copy = std::move(id_copy), cos_t, sin_t, rows, d](Tape& tp, int self) {
                  const auto& g = tp.grad(self);
                  auto& ga = tp.grad(amplitudes);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const std::size_t base = static_cast<std::size_t>(id_copy[r]) * d;
                    for (std::size_t j = 0; j < d; ++j) {
                      const std::size_t i = r * d + j;
                      ga[base + j] += g[i] * (*cos_t)[i] + g[rows * d + i] * (*sin_t)[i];
                    }
                  }
                });
}

// ---------------------------------------------------------------------------

ComplexTensor modrelu(const ComplexTensor& z, std::span<const double> bias) {
  require(!z.shape.empty(), "modrelu: empty shape");
  const std::size_t channels = z.shape.back();
  require(bias.size() == channels || bias.size() == 1, "modrelu: bias does not broadcast over channels");
  ComplexTensor out(z.shape);
  const std::size_t rows = channels == 0 ? 0 : z.size() / channels;
  modrelu_kernel(z.re.data(), z.im.data(), rows, channels, bias, out.re.data(), out.im.data());
  return out;
}

Var modrelu(Tape& t, Var z, Var bias) {
  const auto& zv = t.value(z);
  const auto& bv = t.value(bias);
  const std::size_t d = bv.size();
  require(zv.shape.size() >= 2 && zv.shape[0] == 2 && zv.shape.back() == d, "modrelu: shape mismatch");
  const std::size_t n = zv.size() / 2;
  RealTensor out(zv.shape);
  modrelu_kernel(zv.data.data(), zv.data.data() + n, n / d, d, bv.data, out.data.data(), out.data.data() + n);
  return t.push(std::move(out), {z.id, bias.id}, [z, bias, n, d](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& zv = tp.value(z).data;
    const auto& bv = tp.value(bias).data;
    const bool gz = tp.requires_grad(z);
    const bool gb = tp.requires_grad(bias);
    for (std::size_t i = 0; i < n; ++i) {
      const double zr = zv[i];
      const double zi = zv[n + i];
      const double b = bv[i % d];
      const double m = std::hypot(zr, zi);
      if (m == 0.0 || m + b <= 0.0) continue;
      const double gr = g[i];
      const double gi = g[n + i];
      if (gz) {
        const double s = (m + b) / m;
        const double m3 = m * m * m;
        const double cross = -b * zr * zi / m3;
        auto& gzv = tp.grad(z);
        gzv[i] += gr * (s - b * zr * zr / m3) + gi * cross;
        gzv[n + i] += gr * cross + gi * (s - b * zi * zi / m3);
      }
      if (gb) tp.grad(bias)[i % d] += (gr * zr + gi * zi) / m;
    }
  });
}

// ---------------------------------------------------------------------------

ComplexTensor spectral_gate(const ComplexTensor& z, const SpectralGateParams& params) {
  require(z.shape.size() == 2, "spectral_gate: expected [N, d]");
  const std::size_t n = z.shape[0];
  const std::size_t d = z.shape[1];
  require(params.weight.shape == Shape({2 * d, d}) && params.bias.size() == d, "spectral_gate: shape mismatch");
  const MatR gate = gate_values(z.re.data(), z.im.data(), n, d, params.weight.data.data(), params.bias.data.data());
  ComplexTensor out(z.shape);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double s = gate.data()[i];
    out.re[i] = z.re[i] * s;
    out.im[i] = z.im[i] * s;
  }
  return out;
}

Var spectral_gate(Tape& t, Var z, Var weight, Var bias) {
  const auto& zv = t.value(z);
  require(zv.shape.size() == 3 && zv.shape[0] == 2, "spectral_gate: expected planar [2, rows, d]");
  const std::size_t rows = zv.shape[1];
  const std::size_t d = zv.shape[2];
  require(t.shape(weight) == Shape({2 * d, d}) && t.value(bias).size() == d, "spectral_gate: shape mismatch");
  const std::size_t n = rows * d;
  auto gate = std::make_shared<MatR>(
      gate_values(zv.data.data(), zv.data.data() + n, rows, d, t.value(weight).data.data(), t.value(bias).data.data()));
  RealTensor out(zv.shape);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = gate->data()[i];
    out[i] = zv[i] * s;
    out[n + i] = zv[n + i] * s;
  }
  return t.push(std::move(out), {z.id, weight.id, bias.id}, [z, weight, bias, gate, rows, d, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& zv = tp.value(z).data;
    CMapR g_re(g.data(), rows, d);
    CMapR g_im(g.data() + n, rows, d);
    CMapR z_re(zv.data(), rows, d);
    CMapR z_im(zv.data() + n, rows, d);
    // d loss / d pre-activation
    MatR dpre = (g_re.cwiseProduct(z_re) + g_im.cwiseProduct(z_im)).cwiseProduct(
        gate->cwiseProduct((1.0 - gate->array()).matrix()));
    if (tp.requires_grad(weight)) {
      MapR gw(tp.grad(weight).data(), 2 * d, d);
      gw.topRows(d).noalias() += z_re.transpose() * dpre;
      gw.bottomRows(d).noalias() += z_im.transpose() * dpre;
    }
    if (tp.requires_grad(bias)) {
      auto& gb = tp.grad(bias);
      for (Eigen::Index i = 0; i < dpre.rows(); ++i)
        for (std::size_t j = 0; j < d; ++j) gb[j] += dpre(i, static_cast<Eigen::Index>(j));
    }
    if (tp.requires_grad(z)) {
      CMapR w(tp.value(weight).data.data(), 2 * d, d);
      MapR gz_re(tp.grad(z).data(), rows, d);
      MapR gz_im(tp.grad(z).data() + n, rows, d);
      gz_re.noalias() += dpre * w.topRows(d).transpose();
      gz_im.noalias() += dpre * w.bottomRows(d).transpose();
      gz_re += g_re.cwiseProduct(*gate);
      gz_im += g_im.cwiseProduct(*gate);
    }
  });
}

// ---------------------------------------------------------------------------

ComplexTensor ghc_forward(const ComplexTensor& x, const GlobalKernel& kernel, std::size_t valid_len) {
  require(x.shape.size() == 2, "ghc_forward: expected [N, d]");
  const std::size_t n = x.shape[0];
  const std::size_t d = x.shape[1];
  require(kernel.spectrum.shape.size() == 2 && kernel.channels() == d, "ghc_forward: kernel channel mismatch");
  const std::size_t l_pad = kernel.padded_length();
  if (n > l_pad) throw std::invalid_argument("ghc_forward: sequence length exceeds kernel length");
  const SeqLayout layout{1, n, {std::min(valid_len, n)}};
  ComplexTensor out(x.shape);
  ghc_kernel(x.re.data(), x.im.data(), layout, d, kernel.spectrum.re.data(), kernel.spectrum.im.data(), l_pad,
             out.re.data(), out.im.data(), nullptr);
  return out;
}

Var ghc(Tape& t, Var z, Var kernel, const SeqLayout& layout) {
  const auto& zv = t.value(z);
  const auto& kv = t.value(kernel);
  require(zv.shape.size() == 3 && zv.shape[0] == 2, "ghc: expected planar [2, rows, d]");
  require(kv.shape.size() == 3 && kv.shape[0] == 2, "ghc: expected planar kernel [2, d, L]");
  const std::size_t rows = zv.shape[1];
  const std::size_t d = zv.shape[2];
  const std::size_t l_pad = kv.shape[2];
  require(kv.shape[1] == d, "ghc: kernel channel mismatch");
  check_layout(layout, rows, "ghc");
  if (layout.length > l_pad) throw std::invalid_argument("ghc: sequence length exceeds kernel length");
  const std::size_t n = rows * d;
  const std::size_t kn = d * l_pad;
  auto saved = std::make_shared<GhcSaved>();
  RealTensor out(zv.shape);
  ghc_kernel(zv.data.data(), zv.data.data() + n, layout, d, kv.data.data(), kv.data.data() + kn, l_pad,
             out.data.data(), out.data.data() + n, t.recording() ? saved.get() : nullptr);
  return t.push(std::move(out), {z.id, kernel.id}, [z, kernel, layout, saved, d, l_pad, n, kn](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& kv = tp.value(kernel).data;
    const numerics::FftPlan plan(l_pad);
    const std::size_t len = layout.length;
    const double inv_l = 1.0 / static_cast<double>(l_pad);
    std::vector<double> br(l_pad), bi(l_pad);
    const bool gz = tp.requires_grad(z);
    const bool gk = tp.requires_grad(kernel);
    for (std::size_t b = 0; b < layout.batch; ++b) {
      const std::size_t valid = layout.valid[b];
      for (std::size_t j = 0; j < d; ++j) {
        std::fill(br.begin(), br.end(), 0.0);
        std::fill(bi.begin(), bi.end(), 0.0);
        for (std::size_t t = 0; t < valid; ++t) {
          br[t] = g[(b * len + t) * d + j];
          bi[t] = g[n + (b * len + t) * d + j];
        }
        plan.forward(br, bi);
        const double* kr = kv.data() + j * l_pad;
        const double* ki = kv.data() + kn + j * l_pad;
        if (gk) {
          auto& gkv = tp.grad(kernel);
          const double* xr = saved->spec_re.data() + (b * d + j) * l_pad;
          const double* xi = saved->spec_im.data() + (b * d + j) * l_pad;
          for (std::size_t f = 0; f < l_pad; ++f) {
            // conj(X) * G / L
            gkv[j * l_pad + f] += (xr[f] * br[f] + xi[f] * bi[f]) * inv_l;
            gkv[kn + j * l_pad + f] += (xr[f] * bi[f] - xi[f] * br[f]) * inv_l;
          }
        }
        if (gz) {
          for (std::size_t f = 0; f < l_pad; ++f) {
            // G * conj(K)
            const double gr = br[f];
            const double gi = bi[f];
            br[f] = gr * kr[f] + gi * ki[f];
            bi[f] = gi * kr[f] - gr * ki[f];
          }
          plan.inverse(br, bi);
          auto& gzv = tp.grad(z);
          for (std::size_t t = 0; t < valid; ++t) {
            gzv[(b * len + t) * d + j] += br[t];
            gzv[n + (b * len + t) * d + j] += bi[t];
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------

Var complex_rms_norm(Tape& t, Var z, double eps) {
  const auto& zv = t.value(z);
  require(zv.shape.size() == 3 && zv.shape[0] == 2, "complex_rms_norm: expected planar [2, rows, d]");
  const std::size_t rows = zv.shape[1];
  const std::size_t d = zv.shape[2];
  const std::size_t n = rows * d;
  auto inv = std::make_shared<std::vector<double>>(rows);
  RealTensor out(zv.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double ms = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t i = r * d + j;
      ms += zv[i] * zv[i] + zv[n + i] * zv[n + i];
    }
    const double s = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
    (*inv)[r] = s;
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t i = r * d + j;
      out[i] = zv[i] * s;
      out[n + i] = zv[n + i] * s;
    }
  }
  return t.push(std::move(out), {z.id}, [z, inv, rows, d, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& zv = tp.value(z).data;
    auto& gz = tp.grad(z);
    for (std::size_t r = 0; r < rows; ++r) {
      const double s = (*inv)[r];
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t i = r * d + j;
        dot += g[i] * zv[i] + g[n + i] * zv[n + i];
      }
      const double coef = s * s * s * dot / static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t i = r * d + j;
        gz[i] += g[i] * s - coef * zv[i];
        gz[n + i] += g[n + i] * s - coef * zv[n + i];
      }
    }
  });
}

Var complex_linear(Tape& t, Var z, Var weight) {
  const auto& zv = t.value(z);
  const auto& wv = t.value(weight);
  require(zv.shape.size() == 3 && zv.shape[0] == 2, "complex_linear: expected planar [2, rows, d_in]");
  require(wv.shape.size() == 3 && wv.shape[0] == 2 && wv.shape[1] == zv.shape[2], "complex_linear: weight mismatch");
  const std::size_t rows = zv.shape[1];
  const std::size_t din = wv.shape[1];
  const std::size_t dout = wv.shape[2];
  const std::size_t n_in = rows * din;
  const std::size_t n_out = rows * dout;
  const std::size_t nw = din * dout;
  RealTensor out(Shape{2, rows, dout});
  {
    CMapR xr(zv.data.data(), rows, din), xi(zv.data.data() + n_in, rows, din);
    CMapR wr(wv.data.data(), din, dout), wi(wv.data.data() + nw, din, dout);
    MapR yr(out.data.data(), rows, dout), yi(out.data.data() + n_out, rows, dout);
    yr.noalias() = xr * wr - xi * wi;
    yi.noalias() = xr * wi + xi * wr;
  }
  return t.push(std::move(out), {z.id, weight.id}, [z, weight, rows, din, dout, n_in, n_out, nw](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    CMapR gr(g.data(), rows, dout), gi(g.data() + n_out, rows, dout);
    if (tp.requires_grad(z)) {
      const auto& wv = tp.value(weight).data;
      CMapR wr(wv.data(), din, dout), wi(wv.data() + nw, din, dout);
      MapR gxr(tp.grad(z).data(), rows, din), gxi(tp.grad(z).data() + n_in, rows, din);
      gxr.noalias() += gr * wr.transpose() + gi * wi.transpose();
      gxi.noalias() += gi * wr.transpose() - gr * wi.transpose();
    }
    if (tp.requires_grad(weight)) {
      const auto& zv = tp.value(z).data;
      CMapR xr(zv.data(), rows, din), xi(zv.data() + n_in, rows, din);
      MapR gwr(tp.grad(weight).data(), din, dout), gwi(tp.grad(weight).data() + nw, din, dout);
      gwr.noalias() += xr.transpose() * gr + xi.transpose() * gi;
      gwi.noalias() += xr.transpose() * gi - xi.transpose() * gr;
    }
  });
}

Var complex_features(Tape& t, Var z) {
  const auto& zv = t.value(z);
  require(zv.shape.size() == 3 && zv.shape[0] == 2, "complex_features: expected planar [2, rows, d]");
  const std::size_t rows = zv.shape[1];
  const std::size_t d = zv.shape[2];
  const std::size_t n = rows * d;
  RealTensor out(Shape{rows, 2 * d});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      out[r * 2 * d + j] = zv[r * d + j];
      out[r * 2 * d + d + j] = zv[n + r * d + j];
    }
  }
  return t.push(std::move(out), {z.id}, [z, rows, d, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gz = tp.grad(z);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        gz[r * d + j] += g[r * 2 * d + j];
        gz[n + r * d + j] += g[r * 2 * d + d + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------

Var linear(Tape& t, Var x, Var weight, Var bias) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(weight);
  require(xv.shape.size() == 2 && wv.shape.size() == 2 && xv.shape[1] == wv.shape[0], "linear: shape mismatch");
  const std::size_t rows = xv.shape[0];
  const std::size_t din = wv.shape[0];
  const std::size_t dout = wv.shape[1];
  RealTensor out(Shape{rows, dout});
  MapR y(out.data.data(), rows, dout);
  y.noalias() = CMapR(xv.data.data(), rows, din) * CMapR(wv.data.data(), din, dout);
  std::vector<int> inputs{x.id, weight.id};
  if (bias.valid()) {
    const auto& bv = t.value(bias);
    require(bv.size() == dout, "linear: bias mismatch");
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data.data(), static_cast<Eigen::Index>(dout));
    inputs.push_back(bias.id);
  }
  return t.push(std::move(out), std::move(inputs), [x, weight, bias, rows, din, dout](Tape& tp, int self) {
    CMapR g(tp.grad(self).data(), rows, dout);
    if (tp.requires_grad(x)) {
      MapR gx(tp.grad(x).data(), rows, din);
      gx.noalias() += g * CMapR(tp.value(weight).data.data(), din, dout).transpose();
    }
    if (tp.requires_grad(weight)) {
      MapR gw(tp.grad(weight).data(), din, dout);
      gw.noalias() += CMapR(tp.value(x).data.data(), rows, din).transpose() * g;
    }
    if (bias.valid() && tp.requires_grad(bias)) {
      // plain loops: Eigen's vectorized reductions depend on pointer alignment
      auto& gb = tp.grad(bias);
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < dout; ++j) gb[j] += g(i, static_cast<Eigen::Index>(j));
    }
  });
}

Var linear_transposed(Tape& t, Var x, Var weight) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(weight);
  require(xv.shape.size() == 2 && wv.shape.size() == 2 && xv.shape[1] == wv.shape[1],
          "linear_transposed: shape mismatch");
  const std::size_t rows = xv.shape[0];
  const std::size_t din = wv.shape[1];
  const std::size_t dout = wv.shape[0];
  RealTensor out(Shape{rows, dout});
  MapR(out.data.data(), rows, dout).noalias() =
      CMapR(xv.data.data(), rows, din) * CMapR(wv.data.data(), dout, din).transpose();
  return t.push(std::move(out), {x.id, weight.id}, [x, weight, rows, din, dout](Tape& tp, int self) {
    CMapR g(tp.grad(self).data(), rows, dout);
    if (tp.requires_grad(x)) {
      MapR gx(tp.grad(x).data(), rows, din);
      gx.noalias() += g * CMapR(tp.value(weight).data.data(), dout, din);
    }
    if (tp.requires_grad(weight)) {
      MapR gw(tp.grad(weight).data(), dout, din);
      gw.noalias() += g.transpose() * CMapR(tp.value(x).data.data(), rows, din);
    }
  });
}

Var embedding(Tape& t, Var table, std::span<const int> ids, double scale) {
  const auto& tv = t.value(table);
  require(tv.shape.size() == 2, "embedding: expected [V, d] table");
  const std::size_t v = tv.shape[0];
  const std::size_t d = tv.shape[1];
  RealTensor out(Shape{ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const int tok = ids[r];
    if (tok < 0 || static_cast<std::size_t>(tok) >= v) {
      throw std::out_of_range("embedding: token id " + std::to_string(tok) + " out of range");
    }
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = scale * tv[static_cast<std::size_t>(tok) * d + j];
  }
  std::vector<int> id_copy(ids.begin(), ids.end());
  return t.push(std::move(out), {table.id}, [table, id_copy = std::move(id_copy), d, scale](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gt = tp.grad(table);
    for (std::size_t r = 0; r < id_copy.size(); ++r) {
      const std::size_t base = static_cast<std::size_t>(id_copy[r]) * d;
      for (std::size_t j = 0; j < d; ++j) gt[base + j] += scale * g[r * d + j];
    }
  });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const auto& xv = t.value(x);
  require(xv.shape.size() == 2, "layer_norm: expected [rows, d]");
  const std::size_t rows = xv.shape[0];
  const std::size_t d = xv.shape[1];
  require(t.value(gamma).size() == d && t.value(beta).size() == d, "layer_norm: affine mismatch");
  const auto& gv = t.value(gamma).data;
  const auto& bv = t.value(beta).data;
  auto xhat = std::make_shared<std::vector<double>>(rows * d);
  auto inv = std::make_shared<std::vector<double>>(rows);
  RealTensor out(xv.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv[r * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv[r * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double s = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = s;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xv[r * d + j] - mu) * s;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  return t.push(std::move(out), {x.id, gamma.id, beta.id}, [x, gamma, beta, xhat, inv, rows, d](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& gv = tp.value(gamma).data;
    if (tp.requires_grad(gamma) || tp.requires_grad(beta)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          const std::size_t i = r * d + j;
          if (tp.requires_grad(gamma)) tp.grad(gamma)[j] += g[i] * (*xhat)[i];
          if (tp.requires_grad(beta)) tp.grad(beta)[j] += g[i];
        }
      }
    }
    if (!tp.requires_grad(x)) return;
    auto& gx = tp.grad(x);
    const double dd = static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      double sum_g = 0.0;
      double sum_gh = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t i = r * d + j;
        const double gh = g[i] * gv[j];
        sum_g += gh;
        sum_gh += gh * (*xhat)[i];
      }
      const double s = (*inv)[r];
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t i = r * d + j;
        const double gh = g[i] * gv[j];
        gx[i] += s / dd * (dd * gh - sum_g - (*xhat)[i] * sum_gh);
      }
    }
  });
}

Var relu(Tape& t, Var x) {
  RealTensor out = t.value(x);
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  return t.push(std::move(out), {x.id}, [x](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& xv = tp.value(x).data;
    auto& gx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var cross_entropy(Tape& t, Var logits, std::span<const int> targets) {
  const auto& lv = t.value(logits);
  require(lv.shape.size() == 2 && lv.shape[0] == targets.size(), "cross_entropy: shape mismatch");
  const std::size_t rows = lv.shape[0];
  const std::size_t v = lv.shape[1];
  std::size_t count = 0;
  for (int tg : targets) {
    if (tg >= 0) {
      if (static_cast<std::size_t>(tg) >= v) throw std::out_of_range("cross_entropy: target out of range");
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: no target positions");
  auto probs = std::make_shared<std::vector<double>>(rows * v, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0) continue;
    const double* row = lv.data.data() + r * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    total += log_z - row[targets[r]];
    for (std::size_t j = 0; j < v; ++j) (*probs)[r * v + j] = std::exp(row[j] - log_z);
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  std::vector<int> tg(targets.begin(), targets.end());
  return t.push(RealTensor(Shape{1}, total * inv_count), {logits.id},
                [logits, probs, tg = std::move(tg), rows, v, inv_count](Tape& tp, int self) {
                  const double g = tp.grad(self)[0] * inv_count;
                  auto& gl = tp.grad(logits);
                  for (std::size_t r = 0; r < rows; ++r) {
                    if (tg[r] < 0) continue;
                    for (std::size_t j = 0; j < v; ++j) gl[r * v + j] += g * (*probs)[r * v + j];
                    gl[r * v + static_cast<std::size_t>(tg[r])] -= g;
                  }
                });
}

// ---------------------------------------------------------------------------

Var attention(Tape& t, Var q, Var k, Var v, const AttentionShape& shape) {
  const auto& qv = t.value(q);
  const auto& kv = t.value(k);
  const auto& vv = t.value(v);
  require(qv.shape.size() == 2 && kv.shape == vv.shape && kv.shape.size() == 2 && qv.shape[1] == kv.shape[1],
          "attention: shape mismatch");
  const std::size_t d = qv.shape[1];
  require(shape.heads >= 1 && d % shape.heads == 0, "attention: model width not divisible by head count");
  require(shape.queries.batch == shape.keys.batch, "attention: batch mismatch");
  check_layout(shape.queries, qv.shape[0], "attention queries");
  check_layout(shape.keys, kv.shape[0], "attention keys");
  for (auto n : shape.keys.valid) require(n >= 1, "attention: empty key sequence");
  if (shape.causal) require(shape.queries.length <= shape.keys.length, "attention: causal mask needs Nq <= Nk");

  auto probs = std::make_shared<std::vector<double>>();
  RealTensor out(qv.shape);
  attention_kernel(qv.data.data(), kv.data.data(), vv.data.data(), shape, d, out.data.data(),
                   t.recording() ? probs.get() : nullptr);
  return t.push(std::move(out), {q.id, k.id, v.id}, [q, k, v, shape, probs, d](Tape& tp, int self) {
    const std::size_t h = shape.heads;
    const std::size_t dh = d / h;
    const std::size_t nq = shape.queries.length;
    const std::size_t nk = shape.keys.length;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto& g = tp.grad(self);
    const double* qd = tp.value(q).data.data();
    const double* kd = tp.value(k).data.data();
    const double* vd = tp.value(v).data.data();
    const bool gq = tp.requires_grad(q);
    const bool gk = tp.requires_grad(k);
    const bool gv = tp.requires_grad(v);
    MatR dp(nq, nk);
    for (std::size_t b = 0; b < shape.queries.batch; ++b) {
      for (std::size_t head = 0; head < h; ++head) {
        CMapR p(probs->data() + ((b * h + head) * nq) * nk, nq, nk);
        CSMapR go(g.data() + b * nq * d + head * dh, nq, dh, Stride(d));
        CSMapR kh(kd + b * nk * d + head * dh, nk, dh, Stride(d));
        CSMapR vh(vd + b * nk * d + head * dh, nk, dh, Stride(d));
        CSMapR qh(qd + b * nq * d + head * dh, nq, dh, Stride(d));
        if (gv) {
          SMapR gvh(tp.grad(v).data() + b * nk * d + head * dh, nk, dh, Stride(d));
          gvh.noalias() += p.transpose() * go;
        }
        if (!gq && !gk) continue;
        dp.noalias() = go * vh.transpose();
        for (std::size_t i = 0; i < nq; ++i) {
          double rs = 0.0;
          for (std::size_t j = 0; j < nk; ++j) rs += dp(i, j) * p(i, j);
          for (std::size_t j = 0; j < nk; ++j) dp(i, j) = p(i, j) * (dp(i, j) - rs) * scale;
        }
        if (gq) {
          SMapR gqh(tp.grad(q).data() + b * nq * d + head * dh, nq, dh, Stride(d));
          gqh.noalias() += dp * kh;
        }
        if (gk) {
          SMapR gkh(tp.grad(k).data() + b * nk * d + head * dh, nk, dh, Stride(d));
          gkh.noalias() += dp.transpose() * qh;
        }
      }
    }
  });
}

namespace {

struct MhsaGraph {
  Var out;
  Var attn;
};

void check_mhsa(const RealTensor& x, const AttentionParams& params) {
  require(x.shape.size() == 2, "mhsa_forward: expected [N, d]");
  const std::size_t d = x.shape[1];
  const Shape sq{d, d};
  require(params.wq.shape == sq && params.wk.shape == sq && params.wv.shape == sq && params.wo.shape == sq,
          "mhsa_forward: projection shape mismatch");
  require(params.heads >= 1 && d % params.heads == 0, "mhsa_forward: width not divisible by heads");
}

}  // namespace

RealTensor mhsa_forward(const RealTensor& x, const AttentionParams& params, Mask mask) {
  check_mhsa(x, params);
  Tape t(false);
  const Var xv = t.constant(x);
  const Var q = linear(t, xv, t.constant(params.wq));
  const Var k = linear(t, xv, t.constant(params.wk));
  const Var v = linear(t, xv, t.constant(params.wv));
  const auto layout = SeqLayout::single(x.shape[0]);
  const Var a = attention(t, q, k, v, AttentionShape{params.heads, layout, layout, mask == Mask::causal});
  return t.value(linear(t, a, t.constant(params.wo)));
}

RealTensor mhsa_weights(const RealTensor& x, const AttentionParams& params, Mask mask) {
  check_mhsa(x, params);
  Tape t(false);
  const Var xv = t.constant(x);
  const Var q = linear(t, xv, t.constant(params.wq));
  const Var k = linear(t, xv, t.constant(params.wk));
  const Var v = linear(t, xv, t.constant(params.wv));
  const std::size_t n = x.shape[0];
  const std::size_t d = x.shape[1];
  const auto layout = SeqLayout::single(n);
  const AttentionShape shape{params.heads, layout, layout, mask == Mask::causal};
  std::vector<double> probs;
  std::vector<double> out(n * d);
  attention_kernel(t.value(q).data.data(), t.value(k).data.data(), t.value(v).data.data(), shape, d, out.data(),
                   &probs);
  return RealTensor(Shape{params.heads, n, n}, std::move(probs));
}

RealTensor bridge(const ComplexTensor& z, const BridgeParams& params) {
  require(z.shape.size() == 2, "bridge: expected [N, d]");
  const std::size_t n = z.shape[0];
  const std::size_t d = z.shape[1];
  require(params.weight.shape.size() == 2 && params.weight.shape[0] == 2 * d, "bridge: weight mismatch");
  Tape t(false);
  RealTensor planar(Shape{2, n, d});
  std::copy(z.re.begin(), z.re.end(), planar.data.begin());
  std::copy(z.im.begin(), z.im.end(), planar.data.begin() + static_cast<std::ptrdiff_t>(n * d));
  const Var feats = complex_features(t, t.constant(std::move(planar)));
  const Var b = params.bias.size() == 0 ? Var{} : t.constant(params.bias);
  return t.value(linear(t, feats, t.constant(params.weight), b));
}

}  // namespace prism::layers
