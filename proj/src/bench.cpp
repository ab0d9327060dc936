#include "prism/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <Eigen/Core>
#include <boost/math/distributions/students_t.hpp>

#ifdef __linux__
#include <sched.h>
#include <unistd.h>
#endif

#include "prism/layers.hpp"
#include "prism/numerics.hpp"

#ifndef PRISM_BUILD_REVISION
#define PRISM_BUILD_REVISION "unknown"
#endif

namespace prism::bench {

using numerics::ComplexTensor;
using numerics::RealTensor;
using numerics::Shape;

Primitive parse_primitive(const std::string& name) {
  if (name == "mhsa") return Primitive::mhsa;
  if (name == "ghc") return Primitive::ghc;
  throw std::invalid_argument("unknown primitive: " + name);
}

std::string primitive_name(Primitive p) { return p == Primitive::mhsa ? "mhsa" : "ghc"; }

void BenchConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("bench config: " + m); };
  if (lengths.size() < 2) fail("need at least two lengths");
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const auto n = lengths[i];
    if (n == 0 || (n & (n - 1)) != 0) fail("lengths must be powers of two");
    if (i > 0 && n <= lengths[i - 1]) fail("lengths must be ascending");
  }
  if (reps < 11) fail("at least 11 repetitions are required");
  if (d_model == 0 || heads == 0 || d_model % heads != 0) fail("d_model must be a positive multiple of heads");
  if (!(min_rep_ms > 0.0)) fail("min_rep_ms must be positive");
  const auto fitted = std::count_if(lengths.begin(), lengths.end(), [&](std::size_t n) { return n >= fit_min; });
  if (fitted < 3) fail("slope fit needs at least three lengths >= fit_min");
}

void to_json(nlohmann::json& j, const BenchConfig& c) {
  j = nlohmann::json{{"lengths", c.lengths}, {"d_model", c.d_model},       {"heads", c.heads},
                     {"reps", c.reps},       {"warmup", c.warmup},         {"min_rep_ms", c.min_rep_ms},
                     {"fit_min", c.fit_min}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, BenchConfig& c) {
  j.at("lengths").get_to(c.lengths);
  j.at("d_model").get_to(c.d_model);
  j.at("heads").get_to(c.heads);
  j.at("reps").get_to(c.reps);
  j.at("warmup").get_to(c.warmup);
  j.at("min_rep_ms").get_to(c.min_rep_ms);
  j.at("fit_min").get_to(c.fit_min);
  j.at("seed").get_to(c.seed);
}

double quantile(std::vector<double> sample, double q) {
  if (sample.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(sample.begin(), sample.end());
  const double pos = q * static_cast<double>(sample.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sample.size() - 1);
  return sample[lo] + (pos - static_cast<double>(lo)) * (sample[hi] - sample[lo]);
}

SlopeFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3) throw std::invalid_argument("loglog_fit: need >= 3 paired points");
  const std::size_t n = x.size();
  std::vector<double> lx(n), ly(n);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw std::invalid_argument("loglog_fit: values must be positive");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  SlopeFit f;
  f.points = n;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ly[i] - (f.intercept + f.slope * lx[i]);
    sse += r * r;
  }
  const double se = std::sqrt(sse / static_cast<double>(n - 2) / sxx);
  const boost::math::students_t dist(static_cast<double>(n - 2));
  const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
  f.ci_low = f.slope - t * se;
  f.ci_high = f.slope + t * se;
  return f;
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<double> normals(std::mt19937_64& rng, std::size_t count, double std) {
  std::normal_distribution<double> dist(0.0, std);
  std::vector<double> out(count);
  for (auto& v : out) v = dist(rng);
  return out;
}

// Builds inputs for one length and returns a callable doing one forward pass.
struct Workload {
  RealTensor x;
  layers::AttentionParams attn;
  ComplexTensor z;
  layers::GlobalKernel kernel;
  Primitive primitive;

  double run() const {
    if (primitive == Primitive::mhsa) {
      const auto out = layers::mhsa_forward(x, attn, layers::Mask::none);
      return out.data.front() + out.data.back();
    }
    const auto out = layers::ghc_forward(z, kernel, z.shape[0]);
    return out.re.front() + out.im.back();
  }
};

Workload make_workload(Primitive p, std::size_t n, const BenchConfig& c) {
  std::mt19937_64 rng(c.seed * 1000003 + n);
  const std::size_t d = c.d_model;
  Workload w;
  w.primitive = p;
  if (p == Primitive::mhsa) {
    w.x = RealTensor(Shape{n, d}, normals(rng, n * d, 1.0));
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    w.attn.wq = RealTensor(Shape{d, d}, normals(rng, d * d, bound));
    w.attn.wk = RealTensor(Shape{d, d}, normals(rng, d * d, bound));
    w.attn.wv = RealTensor(Shape{d, d}, normals(rng, d * d, bound));
    w.attn.wo = RealTensor(Shape{d, d}, normals(rng, d * d, bound));
    w.attn.heads = c.heads;
  } else {
    w.z = ComplexTensor(Shape{n, d}, normals(rng, n * d, 1.0), normals(rng, n * d, 1.0));
    w.kernel.spectrum = ComplexTensor(Shape{d, n}, normals(rng, d * n, 1.0), normals(rng, d * n, 1.0));
  }
  return w;
}

}  // namespace

ScalingReport bench_mixer(Primitive primitive, const BenchConfig& config) {
  config.validate();
  ScalingReport report;
  report.primitive = primitive;
  std::vector<double> fit_x, fit_y;
  for (const std::size_t n : config.lengths) {
    const auto w = make_workload(primitive, n, config);
    Timing t;
    t.n = n;

    // calibrate the inner loop so one repetition spans at least min_rep_ms
    const auto c0 = Clock::now();
    t.checksum = w.run();
    const double once_ms = std::chrono::duration<double, std::milli>(Clock::now() - c0).count();
    t.inner = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(config.min_rep_ms / std::max(once_ms, 1e-6))));

    std::vector<double> per_call;
    for (std::size_t r = 0; r < config.warmup + config.reps; ++r) {
      double sink = 0.0;
      const auto s = Clock::now();
      for (std::size_t k = 0; k < t.inner; ++k) sink += w.run();
      const double ns = std::chrono::duration<double, std::nano>(Clock::now() - s).count();
      t.checksum = sink / static_cast<double>(t.inner);
      if (r >= config.warmup) per_call.push_back(ns / static_cast<double>(t.inner));
    }
    t.median_ns = quantile(per_call, 0.5);
    t.q1_ns = quantile(per_call, 0.25);
    t.q3_ns = quantile(per_call, 0.75);
    if (n >= config.fit_min) {
      fit_x.push_back(static_cast<double>(n));
      fit_y.push_back(t.median_ns);
    }
    report.timings.push_back(t);
  }
  report.fit = loglog_fit(fit_x, fit_y);
  return report;
}

bool pin_to_current_cpu() {
#ifdef __linux__
  const int cpu = sched_getcpu();
  if (cpu < 0) return false;
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(cpu, &set);
  return sched_setaffinity(0, sizeof set, &set) == 0;
#else
  return false;
#endif
}

nlohmann::json machine_metadata() {
  nlohmann::json m;
  std::string cpu = "unknown";
#ifdef __linux__
  std::ifstream info("/proc/cpuinfo");
  std::string line;
  while (std::getline(info, line)) {
    if (line.rfind("model name", 0) == 0) {
      cpu = line.substr(line.find(':') + 2);
      break;
    }
  }
  char host[256] = {0};
  if (gethostname(host, sizeof host - 1) == 0) m["host"] = host;
#endif
  m["cpu"] = cpu;
  m["logical_cpus"] = std::thread::hardware_concurrency();
  m["threads_used"] = 1;
#if defined(__clang__)
  m["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  m["compiler"] = std::string("gcc ") + __VERSION__;
#endif
#ifdef __AVX512F__
  m["simd"] = "avx512";
#elif defined(__AVX2__)
  m["simd"] = "avx2";
#else
  m["simd"] = "baseline";
#endif
  m["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  m["revision"] = PRISM_BUILD_REVISION;
  m["timer"] = "std::chrono::steady_clock";
  m["note"] = "forward pass only; CPU frequency assumed fixed during the run (no scaling control)";
  return m;
}

BenchSummary run_bench(const BenchConfig& config) {
  config.validate();
  BenchSummary s;
  s.config = config;
  const bool pinned = pin_to_current_cpu();
  s.machine = machine_metadata();
  s.machine["pinned"] = pinned;
  s.mhsa = bench_mixer(Primitive::mhsa, config);
  s.ghc = bench_mixer(Primitive::ghc, config);
  s.crossover_flag = !(s.ghc.timings.back().median_ns < s.mhsa.timings.back().median_ns);
  return s;
}

std::string format_report(const BenchSummary& summary) {
  std::ostringstream out;
  char buf[160];
  out << "primitive,n,inner,median_ns,q1_ns,q3_ns\n";
  for (const auto* r : {&summary.mhsa, &summary.ghc}) {
    for (const auto& t : r->timings) {
      std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.1f,%.1f,%.1f\n", primitive_name(r->primitive).c_str(), t.n,
                    t.inner, t.median_ns, t.q1_ns, t.q3_ns);
      out << buf;
    }
  }
  out << "\nprimitive,slope,ci_low,ci_high\n";
  for (const auto* r : {&summary.mhsa, &summary.ghc}) {
    std::snprintf(buf, sizeof buf, "%s,%.4f,%.4f,%.4f\n", primitive_name(r->primitive).c_str(), r->fit.slope,
                  r->fit.ci_low, r->fit.ci_high);
    out << buf;
  }
  out << "\ncrossover," << (summary.crossover_flag ? "FLAGGED: ghc not faster at the largest length" : "ok") << '\n';
  return out.str();
}

}  // namespace prism::bench
