#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "civdg/dataset_io.hpp"
#include "civdg/errors.hpp"
#include "civdg/experiment.hpp"
#include "civdg/moments.hpp"

namespace civdg {

namespace {

constexpr std::uint64_t kSweepRepTag = 0x73726570;  // "srep"

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string matrix_line(const DenseArray& m) {
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

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw DataError("short write: " + path);
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

DatasetSplit load_split(const std::string& dir, const std::string& name,
                        SplitRole want) {
  DatasetSplit split = load_dataset_binary(join_path(dir, name));
  if (split.role != want)
    throw DataError(join_path(dir, name) + " holds role " +
                    role_name(split.role) + ", expected " + role_name(want));
  return split;
}

MetricReport report_for(const DatasetSplit& split, const DenseArray& probs,
                        int ece_bins) {
  const PredictionLog log = build_log(split, probs);
  const DenseArray residuals = compute_residuals(split.y, probs);
  return full_report(log, &residuals, ece_bins);
}

std::string sanitize_field(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

const std::vector<std::string>& table_columns() {
  static const std::vector<std::string> cols = {
      "ood_wg_acc", "ood_acc",  "id_wg_acc",    "id_acc",
      "val_metric", "ood_eod",  "ood_dpd",      "violation_id"};
  return cols;
}

double cell_metric(const RunMetrics& r, std::size_t col) {
  switch (col) {
    case 0: return r.ood_wg;
    case 1: return r.ood_acc;
    case 2: return r.id_wg;
    case 3: return r.id_acc;
    case 4: return r.val_metric;
    case 5: return r.ood_eod;
    case 6: return r.ood_dpd;
    default: return r.violation_id;
  }
}

}  // namespace

GenerateResult cmd_generate(const ExperimentConfig& cfg,
                            const std::string& out_dir) {
  const Benchmark bench = make_benchmark(cfg);
  ensure_dir(out_dir);

  GenerateResult res;
  res.train_path = join_path(out_dir, "train.bin");
  res.source_val_path = join_path(out_dir, "source_val.bin");
  res.id_test_path = join_path(out_dir, "id_test.bin");
  res.ood_test_path = join_path(out_dir, "ood_test.bin");
  res.manifest_path = join_path(out_dir, "manifest.txt");

  save_dataset_binary(bench.train, res.train_path);
  save_dataset_binary(bench.source_val, res.source_val_path);
  save_dataset_binary(bench.id_test, res.id_test_path);
  save_dataset_binary(bench.ood_test, res.ood_test_path);

  std::string m;
  m += "manifest_version=1\n";
  m += "config_hash=" + hash_hex(config_hash(cfg)) + "\n";
  m += "train_file=train.bin\n";
  m += "source_val_file=source_val.bin\n";
  m += "id_test_file=id_test.bin\n";
  m += "ood_test_file=ood_test.bin\n";
  m += "train_rows=" + std::to_string(bench.train.n()) + "\n";
  m += "source_val_rows=" + std::to_string(bench.source_val.n()) + "\n";
  m += "id_test_rows=" + std::to_string(bench.id_test.n()) + "\n";
  m += "ood_test_rows=" + std::to_string(bench.ood_test.n()) + "\n";
  m += "train_selection_matrix=" +
       matrix_line(bench.train.provenance.selection_matrix) + "\n";
  m += "ood_selection_matrix=" +
       matrix_line(bench.ood_test.provenance.selection_matrix) + "\n";
  m += "# config\n";
  m += config_text(cfg);
  write_text_file(res.manifest_path, m);
  return res;
}

TrainOutputs cmd_train(const ExperimentConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir, bool dump_representations) {
  cfg.validate();
  const DatasetSplit train = load_split(data_dir, "train.bin", SplitRole::kTrain);
  const DatasetSplit val =
      load_split(data_dir, "source_val.bin", SplitRole::kSourceVal);
  const DatasetSplit id_test =
      load_split(data_dir, "id_test.bin", SplitRole::kIdTest);

  FitResult fitted = fit(train, val, cfg.train);

  // Selection is frozen above; the shifted split is opened only now.
  const DatasetSplit ood =
      load_split(data_dir, "ood_test.bin", SplitRole::kOodTest);

  TrainOutputs out;
  out.best = fitted.best;
  out.history = fitted.history;
  out.val_report = report_for(val, checkpoint_probs(out.best, val.x, val.d),
                              cfg.ece_bins);
  out.id_report = report_for(
      id_test, checkpoint_probs(out.best, id_test.x, id_test.d), cfg.ece_bins);
  out.ood_report =
      report_for(ood, checkpoint_probs(out.best, ood.x, ood.d), cfg.ece_bins);

  ensure_dir(out_dir);
  out.checkpoint_path = join_path(out_dir, "checkpoint.bin");
  out.history_path = join_path(out_dir, "history.csv");
  save_checkpoint(out.best, out.checkpoint_path);
  write_text_file(out.history_path, history_delimited(out.history));
  write_text_file(join_path(out_dir, "report_val.csv"),
                  report_delimited(out.val_report));
  write_text_file(join_path(out_dir, "report_id.csv"),
                  report_delimited(out.id_report));
  write_text_file(join_path(out_dir, "report_ood.csv"),
                  report_delimited(out.ood_report));
  write_text_file(join_path(out_dir, "table_id.txt"),
                  report_table(out.id_report));
  write_text_file(join_path(out_dir, "table_ood.txt"),
                  report_table(out.ood_report));
  if (dump_representations) {
    write_text_file(join_path(out_dir, "representations_train.csv"),
                    representation_delimited(out.best, train));
    write_text_file(join_path(out_dir, "representations_ood_test.csv"),
                    representation_delimited(out.best, ood));
  }
  return out;
}

AblationResult cmd_ablation(const ExperimentConfig& cfg,
                            const std::string& data_dir, int n_workers) {
  cfg.validate();
  if (n_workers < 1)
    throw ConfigError("n_workers must be positive, got " +
                      std::to_string(n_workers));
  const DatasetSplit train = load_split(data_dir, "train.bin", SplitRole::kTrain);
  const DatasetSplit val =
      load_split(data_dir, "source_val.bin", SplitRole::kSourceVal);
  const DatasetSplit id_test =
      load_split(data_dir, "id_test.bin", SplitRole::kIdTest);
  const DatasetSplit ood =
      load_split(data_dir, "ood_test.bin", SplitRole::kOodTest);

  AblationResult res;
  res.methods = {Ablation::kErm, Ablation::kNoCiv, Ablation::kRandomZ,
                 Ablation::kFullCiv};
  res.hash = config_hash(cfg);
  res.cells.assign(res.methods.size(),
                   std::vector<RunMetrics>(static_cast<std::size_t>(cfg.n_seeds)));

  const std::size_t total = res.methods.size() * static_cast<std::size_t>(cfg.n_seeds);
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= total) return;
      const std::size_t mi = job / static_cast<std::size_t>(cfg.n_seeds);
      const std::size_t si = job % static_cast<std::size_t>(cfg.n_seeds);
      RunMetrics& cell = res.cells[mi][si];
      try {
        TrainConfig run = cfg.train;
        run.ablation = res.methods[mi];
        run.seed = derive_seed(cfg.train.seed,
                               {static_cast<std::uint64_t>(mi),
                                static_cast<std::uint64_t>(si)});
        const FitResult fitted = fit(train, val, run);
        const MetricReport id_rep = report_for(
            id_test, checkpoint_probs(fitted.best, id_test.x, id_test.d),
            cfg.ece_bins);
        const MetricReport ood_rep = report_for(
            ood, checkpoint_probs(fitted.best, ood.x, ood.d), cfg.ece_bins);
        cell.ok = true;
        cell.ood_wg = ood_rep.wg_accuracy;
        cell.ood_acc = ood_rep.accuracy;
        cell.id_wg = id_rep.wg_accuracy;
        cell.id_acc = id_rep.accuracy;
        cell.val_metric = fitted.best.best_metric;
        cell.ood_eod = ood_rep.eod;
        cell.ood_dpd = ood_rep.dpd;
        cell.violation_id = id_rep.violation_max;
        cell.best_step = fitted.best.step;
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
    }
  };

  if (n_workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    const int k = std::min<std::size_t>(static_cast<std::size_t>(n_workers), total);
    pool.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return res;
}

ResultsTable ablation_table(const AblationResult& result) {
  ResultsTable table;
  table.hash = result.hash;
  table.col_names = table_columns();
  const std::size_t n_rows = result.methods.size();
  const std::size_t n_cols = table.col_names.size();
  table.mean = DenseArray({static_cast<std::int64_t>(n_rows),
                           static_cast<std::int64_t>(n_cols)});
  table.stddev = DenseArray({static_cast<std::int64_t>(n_rows),
                             static_cast<std::int64_t>(n_cols)});
  for (std::size_t mi = 0; mi < n_rows; ++mi) {
    table.row_names.push_back(ablation_name(result.methods[mi]));
    int ok = 0;
    for (const RunMetrics& r : result.cells[mi]) ok += r.ok ? 1 : 0;
    table.n_ok.push_back(ok);
    for (std::size_t ci = 0; ci < n_cols; ++ci) {
      if (ok == 0) {
        table.mean.at(static_cast<std::int64_t>(mi), static_cast<std::int64_t>(ci)) =
            std::numeric_limits<double>::quiet_NaN();
        table.stddev.at(static_cast<std::int64_t>(mi), static_cast<std::int64_t>(ci)) =
            std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      double sum = 0.0;
      for (const RunMetrics& r : result.cells[mi])
        if (r.ok) sum += cell_metric(r, ci);
      const double mean = sum / ok;
      double sq = 0.0;
      for (const RunMetrics& r : result.cells[mi])
        if (r.ok) sq += (cell_metric(r, ci) - mean) * (cell_metric(r, ci) - mean);
      table.mean.at(static_cast<std::int64_t>(mi), static_cast<std::int64_t>(ci)) = mean;
      table.stddev.at(static_cast<std::int64_t>(mi),
                      static_cast<std::int64_t>(ci)) = std::sqrt(sq / ok);
    }
  }
  return table;
}

std::string ResultsTable::to_text() const {
  std::string out = "config_hash=" + hash_hex(hash) + "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-10s", "method");
  out += buf;
  for (const std::string& c : col_names) {
    std::snprintf(buf, sizeof buf, "  %16s", c.c_str());
    out += buf;
  }
  out += "  n_ok\n";
  for (std::size_t r = 0; r < row_names.size(); ++r) {
    std::snprintf(buf, sizeof buf, "%-10s", row_names[r].c_str());
    out += buf;
    for (std::size_t c = 0; c < col_names.size(); ++c) {
      const double m = mean.at(static_cast<std::int64_t>(r),
                               static_cast<std::int64_t>(c));
      const double s = stddev.at(static_cast<std::int64_t>(r),
                                 static_cast<std::int64_t>(c));
      // rates as percentages; the violation column keeps raw units
      if (col_names[c] == "violation_id")
        std::snprintf(buf, sizeof buf, "  %7.4f +- %5.4f", m, s);
      else
        std::snprintf(buf, sizeof buf, "  %7.2f +- %5.2f", 100.0 * m,
                      100.0 * s);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "  %4d\n", n_ok[r]);
    out += buf;
  }
  return out;
}

std::string ResultsTable::to_delimited() const {
  std::string out = "config_hash=" + hash_hex(hash) + "\n";
  out += "method,metric,mean,std,n_ok\n";
  for (std::size_t r = 0; r < row_names.size(); ++r)
    for (std::size_t c = 0; c < col_names.size(); ++c) {
      out += row_names[r];
      out += ',';
      out += col_names[c];
      out += ',';
      out += fmt_double(mean.at(static_cast<std::int64_t>(r),
                                static_cast<std::int64_t>(c)));
      out += ',';
      out += fmt_double(stddev.at(static_cast<std::int64_t>(r),
                                  static_cast<std::int64_t>(c)));
      out += ',';
      out += std::to_string(n_ok[r]);
      out += '\n';
    }
  return out;
}

std::string ablation_cells_delimited(const AblationResult& result) {
  std::string out = "config_hash=" + hash_hex(result.hash) + "\n";
  out +=
      "method,seed_index,ok,ood_wg,ood_acc,id_wg,id_acc,val_metric,ood_eod,"
      "ood_dpd,violation_id,best_step,error\n";
  for (std::size_t mi = 0; mi < result.methods.size(); ++mi)
    for (std::size_t si = 0; si < result.cells[mi].size(); ++si) {
      const RunMetrics& r = result.cells[mi][si];
      out += ablation_name(result.methods[mi]);
      out += ',' + std::to_string(si);
      out += r.ok ? ",1" : ",0";
      out += ',' + fmt_double(r.ood_wg);
      out += ',' + fmt_double(r.ood_acc);
      out += ',' + fmt_double(r.id_wg);
      out += ',' + fmt_double(r.id_acc);
      out += ',' + fmt_double(r.val_metric);
      out += ',' + fmt_double(r.ood_eod);
      out += ',' + fmt_double(r.ood_dpd);
      out += ',' + fmt_double(r.violation_id);
      out += ',' + std::to_string(r.best_step);
      out += ',' + sanitize_field(r.error);
      out += '\n';
    }
  return out;
}

AblationResult parse_ablation_cells(const std::string& text) {
  AblationResult res;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("config_hash=", 0) != 0)
    throw DataError("cells file missing config_hash line");
  res.hash = std::stoull(line.substr(12), nullptr, 16);
  if (!std::getline(in, line) || line.rfind("method,seed_index,", 0) != 0)
    throw DataError("cells file missing header line");

  auto method_row = [&res](const std::string& name) -> std::size_t {
    const Ablation m = ablation_from_name(name);
    for (std::size_t i = 0; i < res.methods.size(); ++i)
      if (res.methods[i] == m) return i;
    res.methods.push_back(m);
    res.cells.emplace_back();
    return res.methods.size() - 1;
  };

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (int i = 0; i < 12; ++i) {
      const std::size_t pos = line.find(',', start);
      if (pos == std::string::npos)
        throw DataError("cells row with too few fields: " + line);
      f.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    f.push_back(line.substr(start));  // error remainder

    const std::size_t mi = method_row(f[0]);
    RunMetrics r;
    r.ok = f[2] == "1";
    r.ood_wg = std::stod(f[3]);
    r.ood_acc = std::stod(f[4]);
    r.id_wg = std::stod(f[5]);
    r.id_acc = std::stod(f[6]);
    r.val_metric = std::stod(f[7]);
    r.ood_eod = std::stod(f[8]);
    r.ood_dpd = std::stod(f[9]);
    r.violation_id = std::stod(f[10]);
    r.best_step = std::stoll(f[11]);
    r.error = f[12];
    const std::size_t si = static_cast<std::size_t>(std::stoul(f[1]));
    if (res.cells[mi].size() <= si) res.cells[mi].resize(si + 1);
    res.cells[mi][si] = r;
  }
  return res;
}

ResultsTable cmd_report(const std::string& cells_path) {
  std::ifstream in(cells_path, std::ios::binary);
  if (!in) throw DataError("cannot open cells file: " + cells_path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return ablation_table(parse_ablation_cells(buf.str()));
}

SweepResult cmd_sweep(const ExperimentConfig& cfg, const std::string& data_dir,
                      int n_workers) {
  cfg.validate();
  if (n_workers < 1)
    throw ConfigError("n_workers must be positive, got " +
                      std::to_string(n_workers));
  const DatasetSplit train = load_split(data_dir, "train.bin", SplitRole::kTrain);
  const DatasetSplit val =
      load_split(data_dir, "source_val.bin", SplitRole::kSourceVal);
  const DatasetSplit ood =
      load_split(data_dir, "ood_test.bin", SplitRole::kOodTest);

  SweepResult res;
  res.grid = cfg.train.lambda_grid;
  res.hash = config_hash(cfg);
  res.per_seed.resize(static_cast<std::size_t>(cfg.n_seeds));

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto work = [&]() {
    for (;;) {
      const std::size_t r = next.fetch_add(1);
      if (r >= res.per_seed.size()) return;
      try {
        TrainConfig run = cfg.train;
        run.seed = derive_seed(cfg.train.seed, kSweepRepTag,
                               static_cast<std::uint64_t>(r));
        res.per_seed[r] = lambda_sweep(train, val, ood, run, 1);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  if (n_workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    const int k =
        std::min<std::size_t>(static_cast<std::size_t>(n_workers), res.per_seed.size());
    for (int i = 0; i < k; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return res;
}

std::string sweep_result_delimited(const SweepResult& result) {
  std::string out = "config_hash=" + hash_hex(result.hash) + "\n";
  out += "lambda,seed,val_metric,ood_metric,selected\n";
  for (std::size_t s = 0; s < result.per_seed.size(); ++s)
    for (const SweepRow& row : result.per_seed[s]) {
      out += fmt_double(row.lambda);
      out += ',' + std::to_string(s);
      out += ',' + fmt_double(row.val_metric);
      out += ',' + fmt_double(row.ood_metric);
      out += row.selected ? ",1" : ",0";
      out += '\n';
    }
  return out;
}

DenseArray representation(const Checkpoint& ckpt, const DatasetSplit& split) {
  Predictor predictor(ckpt.config.predictor, 0);
  predictor.params() = ckpt.predictor;
  std::vector<int> d_eff = split.d;
  if (ckpt.config.ablation == Ablation::kNoCiv)
    std::fill(d_eff.begin(), d_eff.end(), 0);
  Predictor::Cache cache;
  predictor.forward(split.x, d_eff, &cache);
  return cache.post.empty() ? cache.input : cache.post.back();
}

std::string representation_delimited(const Checkpoint& ckpt,
                                     const DatasetSplit& split) {
  const DenseArray rep = representation(ckpt, split);
  std::string out = "d,z";
  for (std::int64_t c = 0; c < split.y.cols(); ++c)
    out += ",y_" + std::to_string(c);
  for (std::int64_t h = 0; h < rep.cols(); ++h)
    out += ",rep_" + std::to_string(h);
  out += '\n';
  for (std::int64_t i = 0; i < split.n(); ++i) {
    out += std::to_string(split.d[static_cast<std::size_t>(i)]);
    out += ',' + std::to_string(split.z[static_cast<std::size_t>(i)]);
    for (std::int64_t c = 0; c < split.y.cols(); ++c) {
      char buf[32];
      std::snprintf(buf, sizeof buf, ",%g", split.y.at(i, c));
      out += buf;
    }
    for (std::int64_t h = 0; h < rep.cols(); ++h)
      out += ',' + fmt_double(rep.at(i, h));
    out += '\n';
  }
  return out;
}

}  // namespace civdg
