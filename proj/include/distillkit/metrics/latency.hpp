#pragma once

#include <map>
#include <string>
#include <vector>

#include "distillkit/model/decode.hpp"

namespace distillkit::metrics {

struct LatencyOptions {
  int batch_size = 64;
  int repeats = 5;
  int warmup = 1;
  model::BeamOptions beam{};
};

struct LatencyResult {
  // Wall-clock seconds per timed repeat, warm-up excluded.
  std::map<std::string, std::vector<double>> samples;
  std::map<std::string, double> median_s;
  std::string fingerprint;
};

using Testset = std::map<std::string, std::vector<std::vector<int>>>;

// Decodes each language's sources in batches of `batch_size` and records the
// median wall-clock time of a full pass. The model must be in eval mode.
LatencyResult benchmark_latency(const model::Model& model, const Testset& testset, const LatencyOptions& options = {});

double median(std::vector<double> values);

// CPU model, core count, compiler and build type of the measuring process.
std::string environment_fingerprint();

}  // namespace distillkit::metrics
