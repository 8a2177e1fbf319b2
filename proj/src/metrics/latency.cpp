#include "distillkit/metrics/latency.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <thread>

#include "distillkit/errors.hpp"

namespace distillkit::metrics {

double median(std::vector<double> values) {
  if (values.empty()) throw Error("median of an empty sample");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string environment_fingerprint() {
  std::string cpu = "unknown-cpu";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      auto pos = line.find(':');
      if (pos != std::string::npos) cpu = line.substr(line.find_first_not_of(' ', pos + 1));
      break;
    }
  }
#if defined(__clang__)
  const std::string compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  const std::string compiler = "gcc " __VERSION__;
#else
  const std::string compiler = "unknown-compiler";
#endif
#ifdef NDEBUG
  const std::string build = "release";
#else
  const std::string build = "debug";
#endif
  return cpu + "; cores=" + std::to_string(std::thread::hardware_concurrency()) + "; " + compiler + "; " + build;
}

LatencyResult benchmark_latency(const model::Model& model, const Testset& testset, const LatencyOptions& options) {
  if (options.batch_size < 1 || options.repeats < 1 || options.warmup < 0) {
    throw ConfigError("benchmark_latency: batch_size and repeats must be positive");
  }
  LatencyResult result;
  result.fingerprint = environment_fingerprint();
  for (const auto& [lang, sources] : testset) {
    auto pass = [&] {
      for (std::size_t start = 0; start < sources.size(); start += static_cast<std::size_t>(options.batch_size)) {
        const auto end = std::min(sources.size(), start + static_cast<std::size_t>(options.batch_size));
        std::vector<std::vector<int>> batch(sources.begin() + static_cast<std::ptrdiff_t>(start),
                                            sources.begin() + static_cast<std::ptrdiff_t>(end));
        std::vector<int> max_len;
        for (const auto& s : batch) max_len.push_back(model::default_max_len(model.config(), static_cast<int>(s.size())));
        model::decode_batch(model, batch, max_len, options.beam);
      }
    };
    for (int i = 0; i < options.warmup; ++i) pass();
    auto& samples = result.samples[lang];
    for (int i = 0; i < options.repeats; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      pass();
      samples.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    result.median_s[lang] = median(samples);
  }
  return result;
}

}  // namespace distillkit::metrics
