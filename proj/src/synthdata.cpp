#include "picnet/synthdata.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "picnet/common.hpp"
#include "picnet/serialize.hpp"

namespace picnet {

Protocol protocol_from_string(const std::string& name) {
  if (name == "uniform") return Protocol::uniform;
  if (name == "coarse") return Protocol::coarse;
  if (name == "fine") return Protocol::fine;
  throw ConfigError("unknown permutation protocol '" + name + "'");
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::uniform: return "uniform";
    case Protocol::coarse: return "coarse";
    case Protocol::fine: return "fine";
  }
  throw ConfigError("unknown protocol tag");
}

namespace {

constexpr uint64_t kStreamAssign = 0xA57;
constexpr uint64_t kStreamEmbed = 0xE3B;
constexpr uint64_t kStreamTrain = 0x11A1;
constexpr uint64_t kStreamTest = 0x11A2;

// Smallest pool size whose combination count covers `half` distinct subsets.
int pool_size_for(int segments, int half) {
  int p = segments;
  while (true) {
    // C(p, segments), capped to avoid overflow
    long double comb = 1.0L;
    for (int i = 0; i < segments; ++i) comb = comb * (p - i) / (i + 1);
    if (comb >= half) return p;
    ++p;
    if (p > 64) throw ConfigError("hierarchical taxonomy cannot cover the class count");
  }
}

std::vector<std::vector<int>> lexicographic_subsets(int pool, int take, int count) {
  std::vector<std::vector<int>> out;
  std::vector<int> idx(static_cast<size_t>(take));
  std::iota(idx.begin(), idx.end(), 0);
  while (static_cast<int>(out.size()) < count) {
    out.push_back(idx);
    int i = take - 1;
    while (i >= 0 && idx[static_cast<size_t>(i)] == pool - take + i) --i;
    if (i < 0) break;
    ++idx[static_cast<size_t>(i)];
    for (int j = i + 1; j < take; ++j)
      idx[static_cast<size_t>(j)] = idx[static_cast<size_t>(j - 1)] + 1;
  }
  if (static_cast<int>(out.size()) < count)
    throw ConfigError("segment pool too small for the class count");
  return out;
}

}  // namespace

Taxonomy make_taxonomy(const DatasetConfig& cfg) {
  Taxonomy tax;
  tax.mode = cfg.taxonomy;
  tax.num_classes = cfg.num_classes;
  tax.segments_per_class = cfg.segments_per_class;
  tax.actions_per_segment = cfg.actions_per_segment;
  tax.vocab = cfg.vocab;
  tax.channels = cfg.channels;

  Rng assign_rng = make_rng(derive_seed(cfg.seed, kStreamAssign, 0));
  std::vector<int> ids(static_cast<size_t>(cfg.vocab));
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), assign_rng);

  const int a = cfg.actions_per_segment;
  if (cfg.taxonomy == "disjoint") {
    const int64_t needed =
        static_cast<int64_t>(cfg.num_classes) * cfg.segments_per_class * a;
    if (needed > cfg.vocab)
      throw ConfigError("vocabulary too small: disjoint taxonomy needs " +
                        std::to_string(needed) + " actions, vocab is " +
                        std::to_string(cfg.vocab));
    size_t next = 0;
    tax.class_segments.resize(static_cast<size_t>(cfg.num_classes));
    for (auto& segs : tax.class_segments) {
      segs.resize(static_cast<size_t>(cfg.segments_per_class));
      for (auto& seg : segs) {
        seg.assign(ids.begin() + static_cast<long>(next),
                   ids.begin() + static_cast<long>(next + static_cast<size_t>(a)));
        std::sort(seg.begin(), seg.end());
        next += static_cast<size_t>(a);
      }
    }
  } else {  // hierarchical: shared pool, adjacent classes differ only in order
    const int half = (cfg.num_classes + 1) / 2;
    const int pool_n = pool_size_for(cfg.segments_per_class, half);
    if (static_cast<int64_t>(pool_n) * a > cfg.vocab)
      throw ConfigError("vocabulary too small: hierarchical taxonomy needs " +
                        std::to_string(pool_n * a) + " actions, vocab is " +
                        std::to_string(cfg.vocab));
    std::vector<std::vector<int>> pool(static_cast<size_t>(pool_n));
    size_t next = 0;
    for (auto& seg : pool) {
      seg.assign(ids.begin() + static_cast<long>(next),
                 ids.begin() + static_cast<long>(next + static_cast<size_t>(a)));
      std::sort(seg.begin(), seg.end());
      next += static_cast<size_t>(a);
    }
    const auto subsets = lexicographic_subsets(pool_n, cfg.segments_per_class, half);
    tax.class_segments.resize(static_cast<size_t>(cfg.num_classes));
    for (int cls = 0; cls < cfg.num_classes; ++cls) {
      const auto& subset = subsets[static_cast<size_t>(cls / 2)];
      std::vector<int> order(subset.begin(), subset.end());
      if (cls % 2 == 1)  // rotate segment order by one
        std::rotate(order.begin(), order.begin() + 1, order.end());
      for (int s : order)
        tax.class_segments[static_cast<size_t>(cls)].push_back(pool[static_cast<size_t>(s)]);
    }
  }

  Rng embed_rng = make_rng(derive_seed(cfg.seed, kStreamEmbed, 0));
  tax.embeddings = Tensor({cfg.vocab, cfg.channels});
  for (int64_t i = 0; i < tax.embeddings.numel(); ++i)
    tax.embeddings[i] = gaussian(embed_rng, 0.0, 1.0);
  return tax;
}

Sample sample_video(const Taxonomy& tax, int class_id, const DatasetConfig& cfg,
                    Rng& rng) {
  if (class_id < 0 || class_id >= tax.num_classes)
    throw ValidationError("class id out of range");
  const int n = cfg.length, s = tax.segments_per_class, a = tax.actions_per_segment;
  const int base = n / s, rem = n % s;

  Sample out;
  out.label = class_id;
  out.boundaries.push_back(0);
  out.actions.reserve(static_cast<size_t>(n));
  for (int k = 0; k < s; ++k) {
    const int len = base + (k < rem ? 1 : 0);
    if (len < a)
      throw ConfigError("length " + std::to_string(n) + " gives segment " +
                        std::to_string(k) + " only " + std::to_string(len) +
                        " slots for " + std::to_string(a) + " actions");
    if (static_cast<int64_t>(a) * cfg.repeat_max < len)
      throw ConfigError("repeat_max " + std::to_string(cfg.repeat_max) +
                        " cannot fill " + std::to_string(len) + " slots with " +
                        std::to_string(a) + " actions");
    const auto& actions = tax.class_segments[static_cast<size_t>(class_id)][static_cast<size_t>(k)];
    std::vector<int> counts(static_cast<size_t>(a), 1);
    for (int used = a; used < len; ++used) {
      std::vector<int> open;
      for (int i = 0; i < a; ++i)
        if (counts[static_cast<size_t>(i)] < cfg.repeat_max) open.push_back(i);
      const int pick = open[static_cast<size_t>(
          uniform_int(rng, 0, static_cast<int>(open.size()) - 1))];
      ++counts[static_cast<size_t>(pick)];
    }
    std::vector<int> slots;
    slots.reserve(static_cast<size_t>(len));
    for (int i = 0; i < a; ++i)
      slots.insert(slots.end(), static_cast<size_t>(counts[static_cast<size_t>(i)]),
                   actions[static_cast<size_t>(i)]);
    if (cfg.micro_order == "random") std::shuffle(slots.begin(), slots.end(), rng);
    out.actions.insert(out.actions.end(), slots.begin(), slots.end());
    out.boundaries.push_back(out.boundaries.back() + len);
  }

  out.features = Tensor({n, tax.channels});
  for (int t = 0; t < n; ++t) {
    const int action = out.actions[static_cast<size_t>(t)];
    for (int c = 0; c < tax.channels; ++c)
      out.features.at(t, c) =
          tax.embeddings.at(action, c) + gaussian(rng, 0.0, cfg.noise_sigma);
  }
  return out;
}

Dataset generate_dataset(const DatasetConfig& cfg) {
  Dataset ds;
  ds.cfg = cfg;
  ds.taxonomy = make_taxonomy(cfg);
  ds.train.reserve(static_cast<size_t>(cfg.train_samples));
  for (int i = 0; i < cfg.train_samples; ++i) {
    Rng rng = make_rng(derive_seed(cfg.seed, kStreamTrain, static_cast<uint64_t>(i)));
    ds.train.push_back(sample_video(ds.taxonomy, i % cfg.num_classes, cfg, rng));
  }
  ds.test.reserve(static_cast<size_t>(cfg.test_samples));
  for (int i = 0; i < cfg.test_samples; ++i) {
    Rng rng = make_rng(derive_seed(cfg.seed, kStreamTest, static_cast<uint64_t>(i)));
    ds.test.push_back(sample_video(ds.taxonomy, i % cfg.num_classes, cfg, rng));
  }
  return ds;
}

Sample apply_protocol(const Sample& s, Protocol p, Rng& rng) {
  if (s.boundaries.size() < 2 || s.boundaries.front() != 0 ||
      s.boundaries.back() != s.features.dim(0))
    throw ValidationError("sample lacks a valid segment partition");
  if (p == Protocol::uniform) return s;

  const int n = s.features.dim(0), c = s.features.dim(1);
  const int segs = static_cast<int>(s.boundaries.size()) - 1;
  std::vector<int> source(static_cast<size_t>(n));
  Sample out;
  out.label = s.label;

  if (p == Protocol::coarse) {
    std::vector<int> order(static_cast<size_t>(segs));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    out.boundaries.push_back(0);
    int pos = 0;
    for (int k : order) {
      const int lo = s.boundaries[static_cast<size_t>(k)];
      const int hi = s.boundaries[static_cast<size_t>(k) + 1];
      for (int i = lo; i < hi; ++i) source[static_cast<size_t>(pos++)] = i;
      out.boundaries.push_back(pos);
    }
  } else {  // fine
    out.boundaries = s.boundaries;
    for (int k = 0; k < segs; ++k) {
      const int lo = s.boundaries[static_cast<size_t>(k)];
      const int hi = s.boundaries[static_cast<size_t>(k) + 1];
      std::vector<int> perm(static_cast<size_t>(hi - lo));
      std::iota(perm.begin(), perm.end(), lo);
      std::shuffle(perm.begin(), perm.end(), rng);
      for (int i = lo; i < hi; ++i) source[static_cast<size_t>(i)] = perm[static_cast<size_t>(i - lo)];
    }
  }

  out.features = Tensor({n, c});
  out.actions.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int src = source[static_cast<size_t>(i)];
    out.actions[static_cast<size_t>(i)] = s.actions[static_cast<size_t>(src)];
    for (int j = 0; j < c; ++j) out.features.at(i, j) = s.features.at(src, j);
  }
  return out;
}

Tensor multi_hot_targets(const std::vector<Sample>& samples, int vocab) {
  Tensor t({static_cast<int>(samples.size()), vocab});
  for (size_t i = 0; i < samples.size(); ++i)
    for (int action : samples[i].actions) {
      if (action < 0 || action >= vocab)
        throw ValidationError("action id outside the vocabulary");
      t.at(static_cast<int>(i), action) = 1.0;
    }
  return t;
}

namespace {

void pack_split(const std::vector<Sample>& samples, const std::string& prefix,
                const DatasetConfig& cfg, std::vector<io::NamedArray>& arrays) {
  const int count = static_cast<int>(samples.size());
  const int n = cfg.length, c = cfg.channels;
  const int b = cfg.segments_per_class + 1;
  Tensor features({count, n, c});
  Tensor labels({count});
  Tensor boundaries({count, b});
  Tensor actions({count, n});
  for (int i = 0; i < count; ++i) {
    const Sample& s = samples[static_cast<size_t>(i)];
    if (s.features.dim(0) != n || s.features.dim(1) != c ||
        static_cast<int>(s.boundaries.size()) != b)
      throw ValidationError("sample " + std::to_string(i) + " does not match the config");
    for (int64_t j = 0; j < static_cast<int64_t>(n) * c; ++j)
      features[static_cast<int64_t>(i) * n * c + j] = s.features[j];
    labels[i] = s.label;
    for (int j = 0; j < b; ++j)
      boundaries.at(i, j) = s.boundaries[static_cast<size_t>(j)];
    for (int j = 0; j < n; ++j) actions.at(i, j) = s.actions[static_cast<size_t>(j)];
  }
  arrays.push_back({prefix + ".features", std::move(features)});
  arrays.push_back({prefix + ".labels", std::move(labels)});
  arrays.push_back({prefix + ".boundaries", std::move(boundaries)});
  arrays.push_back({prefix + ".actions", std::move(actions)});
}

std::vector<Sample> unpack_split(const io::Container& c, const std::string& prefix,
                                 int expected_count) {
  const Tensor& features = c.find(prefix + ".features");
  const Tensor& labels = c.find(prefix + ".labels");
  const Tensor& boundaries = c.find(prefix + ".boundaries");
  const Tensor& actions = c.find(prefix + ".actions");
  if (features.rank() != 3 || features.dim(0) != expected_count)
    throw IoError("dataset split '" + prefix + "' does not match its config");
  const int count = features.dim(0), n = features.dim(1), ch = features.dim(2);
  std::vector<Sample> out(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Sample& s = out[static_cast<size_t>(i)];
    s.features = Tensor({n, ch});
    for (int64_t j = 0; j < static_cast<int64_t>(n) * ch; ++j)
      s.features[j] = features[static_cast<int64_t>(i) * n * ch + j];
    s.label = static_cast<int>(labels[i]);
    s.boundaries.resize(static_cast<size_t>(boundaries.dim(1)));
    for (int j = 0; j < boundaries.dim(1); ++j)
      s.boundaries[static_cast<size_t>(j)] = static_cast<int>(boundaries.at(i, j));
    s.actions.resize(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) s.actions[static_cast<size_t>(j)] = static_cast<int>(actions.at(i, j));
  }
  return out;
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
  nlohmann::json header;
  header["format"] = "dataset";
  header["config"] = nlohmann::json::parse(dataset_config_json(ds.cfg));
  header["taxonomy"] = {{"mode", ds.taxonomy.mode},
                        {"class_segments", ds.taxonomy.class_segments}};
  std::vector<io::NamedArray> arrays;
  arrays.push_back({"embeddings", ds.taxonomy.embeddings});
  pack_split(ds.train, "train", ds.cfg, arrays);
  pack_split(ds.test, "test", ds.cfg, arrays);
  io::write_container(path, io::kDatasetMagic, 1, header.dump(2), arrays);
}

Dataset load_dataset(const std::string& path) {
  io::Container c = io::read_container(path, io::kDatasetMagic, 1);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(c.header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset '" + path + "' has a corrupt header: " + e.what());
  }
  if (!header.contains("config")) throw IoError("dataset '" + path + "' lacks a config");
  Dataset ds;
  ds.cfg = dataset_config_from_json(header.at("config").dump());
  ds.taxonomy.mode = ds.cfg.taxonomy;
  ds.taxonomy.num_classes = ds.cfg.num_classes;
  ds.taxonomy.segments_per_class = ds.cfg.segments_per_class;
  ds.taxonomy.actions_per_segment = ds.cfg.actions_per_segment;
  ds.taxonomy.vocab = ds.cfg.vocab;
  ds.taxonomy.channels = ds.cfg.channels;
  try {
    ds.taxonomy.class_segments =
        header.at("taxonomy").at("class_segments").get<std::vector<std::vector<std::vector<int>>>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset '" + path + "' has a corrupt taxonomy: " + e.what());
  }
  ds.taxonomy.embeddings = c.find("embeddings");
  if (ds.taxonomy.embeddings.rank() != 2 ||
      ds.taxonomy.embeddings.dim(0) != ds.cfg.vocab ||
      ds.taxonomy.embeddings.dim(1) != ds.cfg.channels)
    throw IoError("dataset '" + path + "' embedding table does not match its config");
  ds.train = unpack_split(c, "train", ds.cfg.train_samples);
  ds.test = unpack_split(c, "test", ds.cfg.test_samples);
  return ds;
}

std::string taxonomy_summary(const Taxonomy& tax) {
  std::ostringstream os;
  os << "taxonomy: " << tax.mode << ", " << tax.num_classes << " classes x "
     << tax.segments_per_class << " segments x " << tax.actions_per_segment
     << " actions, vocab " << tax.vocab;
  for (size_t cls = 0; cls < tax.class_segments.size(); ++cls) {
    os << "\n  class " << cls << ":";
    for (const auto& seg : tax.class_segments[cls]) {
      os << " {";
      for (size_t i = 0; i < seg.size(); ++i) os << (i ? "," : "") << seg[i];
      os << "}";
    }
  }
  os << "\n";
  return os.str();
}

}  // namespace picnet
