#pragma once

// The complete set of learned components, grouped for initialization,
// parameter iteration, and serialization.

#include <algorithm>
#include <string>
#include <vector>

#include "msnc/entropy.hpp"
#include "msnc/transforms.hpp"

namespace msnc {

template <typename T>
struct CodecModel {
  ModelConfig config;
  AnalysisTransform<T> analysis;
  SynthesisTransform<T> synthesis;
  HyperAnalysis<T> hyper_analysis;
  HyperSynthesis<T> hyper_synthesis;
  EntropyModel<T> entropy;

  static CodecModel init(ModelConfig cfg, uint64_t seed) {
    cfg.validate();
    CodecModel m;
    m.config = cfg;
    Rng rng(seed, 0x6d6f'64656cULL);
    m.analysis = AnalysisTransform<T>::make(cfg, rng);
    m.synthesis = SynthesisTransform<T>::make(cfg, rng);
    m.hyper_analysis = HyperAnalysis<T>::make(cfg, rng);
    m.hyper_synthesis = HyperSynthesis<T>::make(cfg, rng);
    m.entropy = EntropyModel<T>::make(cfg, rng);
    return m;
  }

  // Named parameters in registration order.
  ParamMap<T> parameters() const {
    ParamMap<T> out;
    analysis.collect(out, "ga");
    synthesis.collect(out, "gs");
    hyper_analysis.collect(out, "ha");
    hyper_synthesis.collect(out, "hs");
    entropy.collect(out, "em");
    return out;
  }

  ParamMap<T> sorted_parameters() const {
    ParamMap<T> out = parameters();
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : parameters()) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : parameters()) const_cast<Tensor<T>&>(t).zero_grad();
  }
};

template <typename T>
void copy_parameters(const CodecModel<T>& src, CodecModel<T>& dst) {
  ParamMap<T> a = src.parameters();
  ParamMap<T> b = dst.parameters();
  if (a.size() != b.size()) throw UsageError("copy_parameters: structure mismatch");
  for (size_t i = 0; i < a.size(); ++i) {
    auto from = a[i].second.data();
    auto to = const_cast<Tensor<T>&>(b[i].second).mutable_data();
    std::copy(from.begin(), from.end(), to.begin());
  }
}

// Deep copy: fresh parameter tensors holding the same values.
template <typename T>
CodecModel<T> clone_model(const CodecModel<T>& m) {
  CodecModel<T> out = CodecModel<T>::init(m.config, 0);
  copy_parameters(m, out);
  return out;
}

}  // namespace msnc
