#include "gor/report_json.hpp"

#include <fstream>
#include <set>

namespace gor {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in " + where + " config");
}

}  // namespace

json to_json(const RegConfig& cfg) {
  return json{{"lambda", cfg.lambda},
              {"n_groups", cfg.requested_n},
              {"mode", to_string(cfg.mode)},
              {"scope", to_string(cfg.scope)}};
}

json to_json(const DatasetSpec& spec) {
  return json{{"n_classes", spec.n_classes},
              {"samples_per_class", spec.samples_per_class},
              {"hw", spec.image_hw},
              {"sigma", spec.sigma}};
}

json to_json(const TrainConfig& cfg) {
  json j{{"model", cfg.model},     {"epochs", cfg.epochs},
         {"batch", cfg.batch},     {"lr", cfg.lr},
         {"momentum", cfg.momentum}, {"seed", cfg.seed},
         {"task_weight", cfg.task_weight}};
  j["reg"] = to_json(cfg.reg);
  j["data"] = to_json(cfg.data);
  return j;
}

json to_json(const PenaltyReport& rep) {
  json layers = json::object();
  for (const auto& [key, le] : rep.layers) {
    json entry{{"groups", le.groups}, {"sum", le.sum}, {"n", le.n}};
    if (le.size_one_groups) entry["size_one_groups"] = true;
    layers[key] = std::move(entry);
  }
  json j{{"layers", std::move(layers)}, {"total", rep.total}, {"lambda", rep.lambda}};
  if (!rep.warnings.empty()) j["warnings"] = rep.warnings;
  return j;
}

json to_json(const EpochStats& st) {
  return json{{"epoch", st.epoch},         {"loss", st.loss},
              {"task_loss", st.task_loss}, {"penalty", st.penalty},
              {"acc", st.acc},             {"mean_dev", st.mean_dev},
              {"layer_mean_dev", st.layer_mean_dev}};
}

json to_json(const RunReport& rep) {
  json epochs = json::array();
  for (const auto& e : rep.epochs) epochs.push_back(to_json(e));
  json j{{"config", to_json(rep.config)}, {"epochs", std::move(epochs)}};
  j["warnings"] = rep.warnings;
  if (!rep.epochs.empty()) {
    const auto& last = rep.epochs.back();
    j["final"] = json{{"acc", last.acc}, {"mean_dev", last.mean_dev}, {"penalty", last.penalty}};
  }
  j["timing"] = json{{"wall_seconds", rep.wall_seconds}};
  return j;
}

json to_json(const std::vector<BenchResult>& rows) {
  json arr = json::array();
  for (const auto& r : rows)
    arr.push_back(json{{"n", r.n},
                       {"macs", r.macs},
                       {"ns_median", r.ns_median},
                       {"ns_p10", r.ns_p10},
                       {"ns_p90", r.ns_p90},
                       {"bytes", r.bytes}});
  return arr;
}

json to_json(const OrthoReport& rep) {
  json j = to_json(rep.penalty);
  for (const auto& [key, eig] : rep.eigs) {
    j["layers"][key]["min_eig"] = eig.min_eig;
    j["layers"][key]["max_eig"] = eig.max_eig;
  }
  return j;
}

void apply_json(RegConfig& cfg, const json& j) {
  reject_unknown(j, {"lambda", "n_groups", "mode", "scope"}, "reg");
  if (j.contains("lambda")) cfg.lambda = j.at("lambda").get<double>();
  if (j.contains("n_groups")) cfg.requested_n = j.at("n_groups").get<Index>();
  if (j.contains("mode")) cfg.mode = parse_partition_mode(j.at("mode").get<std::string>());
  if (j.contains("scope")) cfg.scope = parse_scope(j.at("scope").get<std::string>());
}

void apply_json(TrainConfig& cfg, const json& j) {
  reject_unknown(j,
                 {"model", "epochs", "batch", "lr", "momentum", "seed", "task_weight", "reg",
                  "data", "lambda", "n_groups", "mode", "scope", "n_classes",
                  "samples_per_class", "hw", "sigma"},
                 "train");
  if (j.contains("model")) cfg.model = j.at("model").get<std::string>();
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<Index>();
  if (j.contains("batch")) cfg.batch = j.at("batch").get<Index>();
  if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
  if (j.contains("momentum")) cfg.momentum = j.at("momentum").get<double>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("task_weight")) cfg.task_weight = j.at("task_weight").get<double>();
  if (j.contains("reg")) apply_json(cfg.reg, j.at("reg"));
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, {"n_classes", "samples_per_class", "hw", "sigma"}, "data");
    if (d.contains("n_classes")) cfg.data.n_classes = d.at("n_classes").get<Index>();
    if (d.contains("samples_per_class"))
      cfg.data.samples_per_class = d.at("samples_per_class").get<Index>();
    if (d.contains("hw")) cfg.data.image_hw = d.at("hw").get<Index>();
    if (d.contains("sigma")) cfg.data.sigma = d.at("sigma").get<double>();
  }
  // flat aliases for the common reg/data knobs, mirroring the CLI flags
  if (j.contains("lambda")) cfg.reg.lambda = j.at("lambda").get<double>();
  if (j.contains("n_groups")) cfg.reg.requested_n = j.at("n_groups").get<Index>();
  if (j.contains("mode")) cfg.reg.mode = parse_partition_mode(j.at("mode").get<std::string>());
  if (j.contains("scope")) cfg.reg.scope = parse_scope(j.at("scope").get<std::string>());
  if (j.contains("n_classes")) cfg.data.n_classes = j.at("n_classes").get<Index>();
  if (j.contains("samples_per_class"))
    cfg.data.samples_per_class = j.at("samples_per_class").get<Index>();
  if (j.contains("hw")) cfg.data.image_hw = j.at("hw").get<Index>();
  if (j.contains("sigma")) cfg.data.sigma = j.at("sigma").get<double>();
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("invalid JSON in '" + path + "': " + e.what());
  }
  return j;
}

json config_section(const json& file, const std::string& section) {
  if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
  for (auto it = file.begin(); it != file.end(); ++it)
    if (it.key() != "train" && it.key() != "bench" && it.key() != "gradcheck" &&
        it.key() != "ortho-report")
      throw ConfigError("unknown config section '" + it.key() + "'");
  return file.contains(section) ? file.at(section) : json::object();
}

}  // namespace gor
