#pragma once

#include <string>
#include <vector>

#include "picnet/config.hpp"
#include "picnet/rng.hpp"
#include "picnet/tensor.hpp"

namespace picnet {

enum class Protocol { uniform, coarse, fine };
Protocol protocol_from_string(const std::string& name);
std::string to_string(Protocol p);

// Activities are partially ordered: a class is an ordered list of segments,
// each segment an unordered set of unit-actions. "disjoint" gives every class
// private action sets; "hierarchical" builds classes from a shared segment
// pool so that some class pairs share the same segment multiset and differ
// only in segment order.
struct Taxonomy {
  std::string mode;
  int num_classes = 0;
  int segments_per_class = 0;
  int actions_per_segment = 0;
  int vocab = 0;
  int channels = 0;
  std::vector<std::vector<std::vector<int>>> class_segments;
  Tensor embeddings;  // [vocab x channels]
};

Taxonomy make_taxonomy(const DatasetConfig& cfg);

struct Sample {
  Tensor features;              // [N x C]
  int label = 0;
  std::vector<int> boundaries;  // cumulative segment starts plus final N
  std::vector<int> actions;     // unit-action id per timestep
};

struct Dataset {
  DatasetConfig cfg;
  Taxonomy taxonomy;
  std::vector<Sample> train, test;
};

// Near-equal macro split of N over the class's segments (earlier segments take
// the remainder); within a segment every action appears at least once, extra
// slots are drawn uniformly among actions still below repeat_max, and the
// micro order is shuffled ("random") or sorted by action id ("canonical").
Sample sample_video(const Taxonomy& tax, int class_id, const DatasetConfig& cfg, Rng& rng);

Dataset generate_dataset(const DatasetConfig& cfg);

// uniform: identity. coarse: shuffle segment blocks, preserve within-block
// order. fine: shuffle within segments, preserve block order.
Sample apply_protocol(const Sample& s, Protocol p, Rng& rng);

Tensor multi_hot_targets(const std::vector<Sample>& samples, int vocab);

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

std::string taxonomy_summary(const Taxonomy& tax);

}  // namespace picnet
