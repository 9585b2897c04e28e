#include "picnet/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "picnet/common.hpp"

namespace picnet {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown " + where + " key '" + it.key() + "'");
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json dataset_to_json(const DatasetConfig& d) {
  json j;
  j["seed"] = d.seed;
  j["taxonomy"] = d.taxonomy;
  j["num_classes"] = d.num_classes;
  j["segments_per_class"] = d.segments_per_class;
  j["actions_per_segment"] = d.actions_per_segment;
  j["vocab"] = d.vocab;
  j["length"] = d.length;
  j["channels"] = d.channels;
  j["noise_sigma"] = d.noise_sigma;
  j["repeat_max"] = d.repeat_max;
  j["micro_order"] = d.micro_order;
  j["train_samples"] = d.train_samples;
  j["test_samples"] = d.test_samples;
  return j;
}

DatasetConfig dataset_from_json_obj(const json& j) {
  if (!j.is_object()) throw ConfigError("dataset config must be a JSON object");
  reject_unknown_keys(j,
                      {"seed", "taxonomy", "num_classes", "segments_per_class",
                       "actions_per_segment", "vocab", "length", "channels",
                       "noise_sigma", "repeat_max", "micro_order", "train_samples",
                       "test_samples"},
                      "dataset");
  DatasetConfig d;
  read_if(j, "seed", d.seed);
  read_if(j, "taxonomy", d.taxonomy);
  read_if(j, "num_classes", d.num_classes);
  read_if(j, "segments_per_class", d.segments_per_class);
  read_if(j, "actions_per_segment", d.actions_per_segment);
  read_if(j, "vocab", d.vocab);
  read_if(j, "length", d.length);
  read_if(j, "channels", d.channels);
  read_if(j, "noise_sigma", d.noise_sigma);
  read_if(j, "repeat_max", d.repeat_max);
  read_if(j, "micro_order", d.micro_order);
  read_if(j, "train_samples", d.train_samples);
  read_if(j, "test_samples", d.test_samples);
  return d;
}

}  // namespace

int RunConfig::class_count() const {
  return task == "multi_label" ? dataset.vocab : dataset.num_classes;
}

void RunConfig::validate() const {
  static const std::set<std::string> variants = {"pic", "pic_ordered", "pic_global",
                                                 "pic_inferred", "temporal_conv"};
  if (!variants.count(variant)) throw ConfigError("unknown variant '" + variant + "'");
  if (task != "single_label" && task != "multi_label")
    throw ConfigError("unknown task '" + task + "'");
  if (optimizer != "sgd" && optimizer != "adam")
    throw ConfigError("unknown optimizer '" + optimizer + "'");
  if (depth < 0) throw ConfigError("depth must be >= 0");
  if (window < 1) throw ConfigError("window must be >= 1");
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (keys < 1 || values < 1) throw ConfigError("keys and values must be >= 1");
  if (channels < 4 || channels % 4 != 0)
    throw ConfigError("channels must be a positive multiple of 4 (bottleneck C/4)");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (lr < 0.0 || momentum < 0.0 || weight_decay < 0.0 || clip_norm < 0.0)
    throw ConfigError("optimizer hyperparameters must be non-negative");

  const DatasetConfig& d = dataset;
  if (d.taxonomy != "disjoint" && d.taxonomy != "hierarchical")
    throw ConfigError("unknown taxonomy mode '" + d.taxonomy + "'");
  if (d.micro_order != "random" && d.micro_order != "canonical")
    throw ConfigError("unknown micro_order '" + d.micro_order + "'");
  if (d.num_classes < 2) throw ConfigError("need at least 2 classes");
  if (d.segments_per_class < 1 || d.actions_per_segment < 1)
    throw ConfigError("segments_per_class and actions_per_segment must be >= 1");
  if (d.taxonomy == "hierarchical" && d.segments_per_class < 2)
    throw ConfigError("hierarchical taxonomy needs segments_per_class >= 2");
  if (d.length < d.segments_per_class)
    throw ConfigError("sample length must cover one slot per segment");
  if (d.channels < 1) throw ConfigError("dataset channels must be >= 1");
  if (d.channels != channels)
    throw ConfigError("dataset channels must equal the model channel width");
  if (d.vocab < 1) throw ConfigError("vocab must be >= 1");
  if (d.noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
  if (d.repeat_max < 1) throw ConfigError("repeat_max must be >= 1");
  if (d.train_samples < 1 || d.test_samples < 1)
    throw ConfigError("train_samples and test_samples must be >= 1");
}

std::string to_canonical_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["variant"] = c.variant;
  j["depth"] = c.depth;
  j["window"] = c.window;
  j["stride"] = c.stride;
  j["keys"] = c.keys;
  j["values"] = c.values;
  j["channels"] = c.channels;
  j["task"] = c.task;
  j["dataset"] = dataset_to_json(c.dataset);
  j["optimizer"] = c.optimizer;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_epsilon"] = c.adam_epsilon;
  j["clip_norm"] = c.clip_norm;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["out_dir"] = c.out_dir;
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown_keys(j,
                      {"seed", "variant", "depth", "window", "stride", "keys", "values",
                       "channels", "task", "dataset", "optimizer", "lr", "momentum",
                       "weight_decay", "adam_beta1", "adam_beta2", "adam_epsilon",
                       "clip_norm", "epochs", "batch_size", "out_dir"},
                      "config");
  RunConfig c;
  try {
    read_if(j, "optimizer", c.optimizer);
    if (c.optimizer == "adam") c.lr = 0.01;
    read_if(j, "seed", c.seed);
    read_if(j, "variant", c.variant);
    read_if(j, "depth", c.depth);
    read_if(j, "window", c.window);
    read_if(j, "stride", c.stride);
    read_if(j, "keys", c.keys);
    read_if(j, "values", c.values);
    read_if(j, "channels", c.channels);
    read_if(j, "task", c.task);
    if (j.contains("dataset")) c.dataset = dataset_from_json_obj(j.at("dataset"));
    read_if(j, "lr", c.lr);
    read_if(j, "momentum", c.momentum);
    read_if(j, "weight_decay", c.weight_decay);
    read_if(j, "adam_beta1", c.adam_beta1);
    read_if(j, "adam_beta2", c.adam_beta2);
    read_if(j, "adam_epsilon", c.adam_epsilon);
    read_if(j, "clip_norm", c.clip_norm);
    read_if(j, "epochs", c.epochs);
    read_if(j, "batch_size", c.batch_size);
    read_if(j, "out_dir", c.out_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return run_config_from_json(buf.str());
}

std::string dataset_config_json(const DatasetConfig& cfg) {
  return dataset_to_json(cfg).dump(2) + "\n";
}

DatasetConfig dataset_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset config is not valid JSON: ") + e.what());
  }
  try {
    return dataset_from_json_obj(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset config field has the wrong type: ") + e.what());
  }
}

std::string resolve_out_dir(const RunConfig& cfg) {
  if (const char* env = std::getenv("PICNET_OUT_DIR"); env && *env) return env;
  return cfg.out_dir;
}

}  // namespace picnet
