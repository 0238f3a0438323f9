#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "civdg/errors.hpp"
#include "civdg/experiment.hpp"

namespace civdg {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt_double(v[i]);
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::string matrix_text(const DenseArray& m) {
  if (m.size() == 0) return "";
  std::string out;
  for (std::int64_t r = 0; r < m.rows(); ++r) {
    if (r) out += ';';
    for (std::int64_t c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += fmt_double(m.at(r, c));
    }
  }
  return out;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  parts.push_back(cur);
  return parts;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + v + "'");
  }
}

std::int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  return static_cast<int>(parse_i64(key, v));
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("bad flag for " + key + ": '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (v.empty()) return out;
  for (const std::string& p : split_on(v, ','))
    out.push_back(parse_int(key, p));
  return out;
}

std::vector<double> parse_double_list(const std::string& key,
                                      const std::string& v) {
  std::vector<double> out;
  if (v.empty()) return out;
  for (const std::string& p : split_on(v, ','))
    out.push_back(parse_double(key, p));
  return out;
}

DenseArray parse_matrix(const std::string& key, const std::string& v) {
  if (v.empty()) return DenseArray();
  const std::vector<std::string> rows = split_on(v, ';');
  std::vector<std::vector<double>> vals;
  for (const std::string& r : rows) vals.push_back(parse_double_list(key, r));
  const std::int64_t n_cols = static_cast<std::int64_t>(vals[0].size());
  for (const auto& r : vals)
    if (static_cast<std::int64_t>(r.size()) != n_cols)
      throw ConfigError(key + ": ragged matrix rows");
  DenseArray m({static_cast<std::int64_t>(vals.size()), n_cols});
  for (std::int64_t r = 0; r < m.rows(); ++r)
    for (std::int64_t c = 0; c < n_cols; ++c)
      m.at(r, c) = vals[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return m;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string ood_mode_text(OodMode mode, int site) {
  if (mode == OodMode::kHeldOutSite)
    return "held_out_site=" + std::to_string(site);
  return ood_mode_name(mode);
}

void apply_key(ExperimentConfig& cfg, const std::string& key,
               const std::string& value) {
  ScmConfig& s = cfg.scm;
  TrainConfig& t = cfg.train;
  PredictorSpec& p = t.predictor;
  CriticSpec& c = t.critic;

  if (key == "scm.n_sites") s.n_sites = parse_int(key, value);
  else if (key == "scm.n_strata") s.n_strata = parse_int(key, value);
  else if (key == "scm.n_classes") s.n_classes = parse_int(key, value);
  else if (key == "scm.feature_dim") s.feature_dim = parse_int(key, value);
  else if (key == "scm.artifact_strength") s.artifact_strength = parse_double(key, value);
  else if (key == "scm.confounder_strength") s.confounder_strength = parse_double(key, value);
  else if (key == "scm.selection_matrix") s.selection_matrix = parse_matrix(key, value);
  else if (key == "scm.label_noise") s.label_noise = parse_double(key, value);
  else if (key == "scm.seed") s.seed = parse_u64(key, value);
  else if (key == "scm.u_dim") s.u_dim = parse_int(key, value);
  else if (key == "scm.a_dim") s.a_dim = parse_int(key, value);
  else if (key == "scm.stratum_effect") s.stratum_effect = parse_double(key, value);
  else if (key == "scm.case_mix") s.case_mix = parse_double(key, value);
  else if (key == "scm.noise_r") s.noise_r = parse_double(key, value);
  else if (key == "scm.noise_x") s.noise_x = parse_double(key, value);
  else if (key == "scm.noise_y") s.noise_y = parse_double(key, value);
  else if (key == "scm.site_jitter") s.site_jitter = parse_double(key, value);
  else if (key == "scm.multi_label") s.multi_label = parse_bool(key, value);
  else if (key == "train.lambda") t.lambda = parse_double(key, value);
  else if (key == "train.beta") t.beta = parse_double(key, value);
  else if (key == "train.n_critic") t.n_critic = parse_int(key, value);
  else if (key == "train.batch_size") t.batch_size = parse_i64(key, value);
  else if (key == "train.lr_predictor") t.lr_predictor = parse_double(key, value);
  else if (key == "train.lr_critic") t.lr_critic = parse_double(key, value);
  else if (key == "train.weight_decay") t.weight_decay = parse_double(key, value);
  else if (key == "train.momentum_ema") t.momentum_ema = parse_double(key, value);
  else if (key == "train.max_steps") t.max_steps = parse_i64(key, value);
  else if (key == "train.eval_every") t.eval_every = parse_i64(key, value);
  else if (key == "train.patience") t.patience = parse_int(key, value);
  else if (key == "train.seed") t.seed = parse_u64(key, value);
  else if (key == "train.ablation") t.ablation = ablation_from_name(value);
  else if (key == "train.lambda_grid") t.lambda_grid = parse_double_list(key, value);
  else if (key == "train.schedule") t.schedule = schedule_from_name(value);
  else if (key == "model.predictor.hidden_dims") p.hidden_dims = parse_int_list(key, value);
  else if (key == "model.predictor.d_embed_dim") p.d_embed_dim = parse_int(key, value);
  else if (key == "model.predictor.use_demographics") p.use_demographics = parse_bool(key, value);
  else if (key == "model.predictor.leaky_slope") p.leaky_slope = parse_double(key, value);
  else if (key == "model.predictor.frozen_projection_dim") p.frozen_projection_dim = parse_int(key, value);
  else if (key == "model.critic.z_embed_dim") c.z_embed_dim = parse_int(key, value);
  else if (key == "model.critic.d_embed_dim") c.d_embed_dim = parse_int(key, value);
  else if (key == "model.critic.hidden_dim") c.hidden_dim = parse_int(key, value);
  else if (key == "model.critic.n_layers") c.n_layers = parse_int(key, value);
  else if (key == "model.critic.output_dim") c.output_dim = parse_int(key, value);
  else if (key == "model.critic.leaky_slope") c.leaky_slope = parse_double(key, value);
  else if (key == "exp.n_seeds") cfg.n_seeds = parse_int(key, value);
  else if (key == "exp.n_train") cfg.n_train = parse_i64(key, value);
  else if (key == "exp.n_val") cfg.n_val = parse_i64(key, value);
  else if (key == "exp.n_id_test") cfg.n_id_test = parse_i64(key, value);
  else if (key == "exp.n_ood_test") cfg.n_ood_test = parse_i64(key, value);
  else if (key == "exp.ood_mode") {
    if (value == "independent") cfg.ood_mode = OodMode::kIndependent;
    else if (value == "reversed") cfg.ood_mode = OodMode::kReversed;
    else if (value.rfind("held_out_site=", 0) == 0) {
      cfg.ood_mode = OodMode::kHeldOutSite;
      cfg.held_out_site = parse_int(key, value.substr(14));
    } else {
      throw ConfigError("bad exp.ood_mode: '" + value + "'");
    }
  }
  else if (key == "exp.out_dir") cfg.out_dir = value;
  else if (key == "metric.ece_bins") cfg.ece_bins = parse_int(key, value);
  else throw ConfigError("unknown config key: '" + key + "'");
}

}  // namespace

void ExperimentConfig::finalize() {
  train.predictor.feature_dim = scm.feature_dim;
  train.predictor.n_classes = scm.n_classes;
  train.predictor.n_strata = scm.n_strata;
  train.predictor.multi_label = scm.multi_label;
  train.critic.n_sites = scm.n_sites;
  train.critic.n_strata = scm.n_strata;
}

void ExperimentConfig::validate() const {
  civdg::validate(scm);
  train.validate();
  if (train.predictor.feature_dim != scm.feature_dim ||
      train.predictor.n_strata != scm.n_strata ||
      train.critic.n_sites != scm.n_sites)
    throw ConfigError("model dims out of sync; call finalize() first");
  if (n_seeds < 1) throw ConfigError("exp.n_seeds must be >= 1");
  if (n_train < 1 || n_val < 1 || n_id_test < 1 || n_ood_test < 1)
    throw ConfigError("split sizes must be >= 1");
  if (ece_bins < 1) throw ConfigError("metric.ece_bins must be >= 1");
  if (ood_mode == OodMode::kHeldOutSite &&
      (held_out_site < 0 || held_out_site >= scm.n_sites))
    throw ConfigError("held out site " + std::to_string(held_out_site) +
                      " outside [0, " + std::to_string(scm.n_sites) + ")");
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected key=value, got '" + stripped + "'");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    apply_key(cfg, key, value);
  }
  cfg.finalize();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string config_text(const ExperimentConfig& cfg) {
  const ScmConfig& s = cfg.scm;
  const TrainConfig& t = cfg.train;
  const PredictorSpec& p = t.predictor;
  const CriticSpec& c = t.critic;
  std::string out;
  auto kv = [&out](const std::string& k, const std::string& v) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  };
  kv("scm.n_sites", std::to_string(s.n_sites));
  kv("scm.n_strata", std::to_string(s.n_strata));
  kv("scm.n_classes", std::to_string(s.n_classes));
  kv("scm.feature_dim", std::to_string(s.feature_dim));
  kv("scm.artifact_strength", fmt_double(s.artifact_strength));
  kv("scm.confounder_strength", fmt_double(s.confounder_strength));
  kv("scm.selection_matrix", matrix_text(s.selection_matrix));
  kv("scm.label_noise", fmt_double(s.label_noise));
  kv("scm.seed", std::to_string(s.seed));
  kv("scm.u_dim", std::to_string(s.u_dim));
  kv("scm.a_dim", std::to_string(s.a_dim));
  kv("scm.stratum_effect", fmt_double(s.stratum_effect));
  kv("scm.case_mix", fmt_double(s.case_mix));
  kv("scm.noise_r", fmt_double(s.noise_r));
  kv("scm.noise_x", fmt_double(s.noise_x));
  kv("scm.noise_y", fmt_double(s.noise_y));
  kv("scm.site_jitter", fmt_double(s.site_jitter));
  kv("scm.multi_label", s.multi_label ? "1" : "0");
  kv("train.lambda", fmt_double(t.lambda));
  kv("train.beta", fmt_double(t.beta));
  kv("train.n_critic", std::to_string(t.n_critic));
  kv("train.batch_size", std::to_string(t.batch_size));
  kv("train.lr_predictor", fmt_double(t.lr_predictor));
  kv("train.lr_critic", fmt_double(t.lr_critic));
  kv("train.weight_decay", fmt_double(t.weight_decay));
  kv("train.momentum_ema", fmt_double(t.momentum_ema));
  kv("train.max_steps", std::to_string(t.max_steps));
  kv("train.eval_every", std::to_string(t.eval_every));
  kv("train.patience", std::to_string(t.patience));
  kv("train.seed", std::to_string(t.seed));
  kv("train.ablation", ablation_name(t.ablation));
  kv("train.lambda_grid", join_doubles(t.lambda_grid));
  kv("train.schedule", schedule_name(t.schedule));
  kv("model.predictor.hidden_dims", join_ints(p.hidden_dims));
  kv("model.predictor.d_embed_dim", std::to_string(p.d_embed_dim));
  kv("model.predictor.use_demographics", p.use_demographics ? "1" : "0");
  kv("model.predictor.leaky_slope", fmt_double(p.leaky_slope));
  kv("model.predictor.frozen_projection_dim",
     std::to_string(p.frozen_projection_dim));
  kv("model.critic.z_embed_dim", std::to_string(c.z_embed_dim));
  kv("model.critic.d_embed_dim", std::to_string(c.d_embed_dim));
  kv("model.critic.hidden_dim", std::to_string(c.hidden_dim));
  kv("model.critic.n_layers", std::to_string(c.n_layers));
  kv("model.critic.output_dim", std::to_string(c.output_dim));
  kv("model.critic.leaky_slope", fmt_double(c.leaky_slope));
  kv("exp.n_seeds", std::to_string(cfg.n_seeds));
  kv("exp.n_train", std::to_string(cfg.n_train));
  kv("exp.n_val", std::to_string(cfg.n_val));
  kv("exp.n_id_test", std::to_string(cfg.n_id_test));
  kv("exp.n_ood_test", std::to_string(cfg.n_ood_test));
  kv("exp.ood_mode", ood_mode_text(cfg.ood_mode, cfg.held_out_site));
  kv("exp.out_dir", cfg.out_dir);
  kv("metric.ece_bins", std::to_string(cfg.ece_bins));
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_text(cfg);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "0x%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig reference_config() {
  ExperimentConfig cfg;
  cfg.scm.n_sites = 5;
  cfg.scm.n_strata = 2;
  cfg.scm.n_classes = 2;
  cfg.scm.feature_dim = 16;
  cfg.scm.seed = 1337;
  // stratum 0 enriched in the low site block; stratum 1 samples sites evenly
  cfg.scm.selection_matrix = DenseArray(
      {2, 5}, {0.45, 0.45, 0.0, 0.05, 0.05, 0.2, 0.2, 0.2, 0.2, 0.2});
  cfg.train.seed = 2024;
  cfg.train.max_steps = 300;
  cfg.train.eval_every = 25;
  cfg.train.patience = 5;
  cfg.train.predictor.hidden_dims = {32};
  cfg.ood_mode = OodMode::kReversed;
  cfg.finalize();
  return cfg;
}

Benchmark make_benchmark(const ExperimentConfig& cfg) {
  cfg.validate();
  ScmConfig train_cfg = cfg.scm;
  if (cfg.ood_mode == OodMode::kHeldOutSite)
    train_cfg = exclude_site(cfg.scm, cfg.held_out_site);
  const ScmConfig ood_cfg =
      make_ood_shift(train_cfg, cfg.ood_mode, cfg.held_out_site);

  Benchmark b;
  b.train = sample_dataset(train_cfg, cfg.n_train, SplitRole::kTrain);
  b.source_val = sample_dataset(train_cfg, cfg.n_val, SplitRole::kSourceVal);
  b.id_test = sample_dataset(train_cfg, cfg.n_id_test, SplitRole::kIdTest);
  b.ood_test = sample_dataset(ood_cfg, cfg.n_ood_test, SplitRole::kOodTest);
  return b;
}

}  // namespace civdg
