#pragma once

#include <cstdint>
#include <string>

namespace picnet {

struct DatasetConfig {
  uint64_t seed = 7;
  std::string taxonomy = "disjoint";  // disjoint | hierarchical
  int num_classes = 10;
  int segments_per_class = 4;
  int actions_per_segment = 3;
  int vocab = 120;  // unit-action vocabulary size
  int length = 64;  // timesteps per sample
  int channels = 64;
  double noise_sigma = 0.5;
  int repeat_max = 8;
  std::string micro_order = "random";  // random | canonical
  int train_samples = 200;
  int test_samples = 100;
};

struct RunConfig {
  uint64_t seed = 1;
  std::string variant = "pic";  // pic | pic_ordered | pic_global | pic_inferred | temporal_conv
  int depth = 4;
  int window = 9;  // temporal receptive field T
  int stride = 2;  // pooling stride
  int keys = 32;
  int values = 32;
  int channels = 64;
  std::string task = "single_label";  // single_label | multi_label
  DatasetConfig dataset;
  std::string optimizer = "sgd";  // sgd | adam
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-4;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
  int epochs = 100;
  int batch_size = 32;
  std::string out_dir = "out";

  int reduced_channels() const { return channels / 4; }
  int class_count() const;
  void validate() const;  // throws ConfigError
};

// Canonical form: sorted keys, 2-space indent, trailing newline. Parsing
// rejects unknown keys; absent keys take defaults (lr defaults to 0.01 when
// the optimizer is adam).
std::string to_canonical_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);

std::string dataset_config_json(const DatasetConfig& cfg);
DatasetConfig dataset_config_from_json(const std::string& text);

// Output directory resolution: PICNET_OUT_DIR overrides cfg.out_dir.
std::string resolve_out_dir(const RunConfig& cfg);

inline int pad_left_for(int window) { return (window - 1) / 2; }
inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace picnet
