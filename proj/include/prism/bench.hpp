#pragma once

// Forward-pass timing of the two token mixers (multi-head self-attention and
// global harmonic convolution) over a range of sequence lengths, with a
// log-log slope fit.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace prism::bench {

enum class Primitive { mhsa, ghc };

Primitive parse_primitive(const std::string& name);
std::string primitive_name(Primitive p);

struct BenchConfig {
  std::vector<std::size_t> lengths{128, 256, 512, 1024, 2048, 4096};
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t reps = 11;    // timed repetitions per length, at least 11
  std::size_t warmup = 2;   // discarded repetitions
  double min_rep_ms = 5.0;  // inner loop repeats the call until a repetition lasts this long
  std::size_t fit_min = 512;  // slope is fitted over lengths >= fit_min
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const BenchConfig& c);
void from_json(const nlohmann::json& j, BenchConfig& c);

struct Timing {
  std::size_t n = 0;
  std::size_t inner = 1;  // calls per repetition
  double median_ns = 0.0;
  double q1_ns = 0.0;
  double q3_ns = 0.0;
  double checksum = 0.0;  // sum of the last output, keeps the call observable
};

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double ci_low = 0.0;  // 95% Student t interval
  double ci_high = 0.0;
  std::size_t points = 0;
};

/// Ordinary least squares of log(y) on log(x).
SlopeFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y);

/// Linear-interpolated quantile of an unsorted sample, q in [0, 1].
double quantile(std::vector<double> sample, double q);

struct ScalingReport {
  Primitive primitive = Primitive::mhsa;
  std::vector<Timing> timings;  // per-call times
  SlopeFit fit;
};

/// Times the library forward path (mhsa_forward or ghc_forward with L_pad = N)
/// on inputs drawn from config.seed.
ScalingReport bench_mixer(Primitive primitive, const BenchConfig& config);

struct BenchSummary {
  BenchConfig config;
  ScalingReport mhsa;
  ScalingReport ghc;
  bool crossover_flag = false;  // raised when ghc is not faster at the largest length
  nlohmann::json machine;
};

BenchSummary run_bench(const BenchConfig& config);

/// Host, CPU, compiler and build flags.
nlohmann::json machine_metadata();

/// primitive,n,inner,median_ns,q1_ns,q3_ns rows, then primitive,slope,ci_low,ci_high
/// rows, then a crossover line.
std::string format_report(const BenchSummary& summary);

/// Pins the calling thread to the CPU it is running on; returns false where unsupported.
bool pin_to_current_cpu();

}  // namespace prism::bench
