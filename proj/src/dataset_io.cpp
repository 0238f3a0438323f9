#include "civdg/dataset_io.hpp"

#include <cinttypes>
#include <cstdio>
#include <sstream>

#include "civdg/binio.hpp"

namespace civdg {
namespace {

constexpr char kMagic[4] = {'C', 'I', 'V', 'D'};
constexpr std::uint16_t kVersion = 1;

void write_config(std::ostream& os, const ScmConfig& cfg) {
  using binio::write_pod;
  write_pod<std::int64_t>(os, cfg.n_sites);
  write_pod<std::int64_t>(os, cfg.n_strata);
  write_pod<std::int64_t>(os, cfg.n_classes);
  write_pod<std::int64_t>(os, cfg.feature_dim);
  write_pod<double>(os, cfg.artifact_strength);
  write_pod<double>(os, cfg.confounder_strength);
  write_pod<double>(os, cfg.label_noise);
  write_pod<std::uint64_t>(os, cfg.seed);
  write_pod<std::int64_t>(os, cfg.u_dim);
  write_pod<std::int64_t>(os, cfg.a_dim);
  write_pod<double>(os, cfg.stratum_effect);
  write_pod<double>(os, cfg.case_mix);
  write_pod<double>(os, cfg.noise_r);
  write_pod<double>(os, cfg.noise_x);
  write_pod<double>(os, cfg.noise_y);
  write_pod<double>(os, cfg.site_jitter);
  write_pod<std::uint8_t>(os, cfg.multi_label ? 1 : 0);
  write_pod<std::uint8_t>(os, cfg.selection_matrix.empty() ? 0 : 1);
  if (!cfg.selection_matrix.empty())
    binio::write_doubles(os, cfg.selection_matrix.data(),
                         static_cast<std::size_t>(cfg.selection_matrix.size()));
}

ScmConfig read_config(std::istream& is) {
  using binio::read_pod;
  ScmConfig cfg;
  cfg.n_sites = static_cast<int>(read_pod<std::int64_t>(is, "n_sites"));
  cfg.n_strata = static_cast<int>(read_pod<std::int64_t>(is, "n_strata"));
  cfg.n_classes = static_cast<int>(read_pod<std::int64_t>(is, "n_classes"));
  cfg.feature_dim = static_cast<int>(read_pod<std::int64_t>(is, "feature_dim"));
  cfg.artifact_strength = read_pod<double>(is, "artifact_strength");
  cfg.confounder_strength = read_pod<double>(is, "confounder_strength");
  cfg.label_noise = read_pod<double>(is, "label_noise");
  cfg.seed = read_pod<std::uint64_t>(is, "seed");
  cfg.u_dim = static_cast<int>(read_pod<std::int64_t>(is, "u_dim"));
  cfg.a_dim = static_cast<int>(read_pod<std::int64_t>(is, "a_dim"));
  cfg.stratum_effect = read_pod<double>(is, "stratum_effect");
  cfg.case_mix = read_pod<double>(is, "case_mix");
  cfg.noise_r = read_pod<double>(is, "noise_r");
  cfg.noise_x = read_pod<double>(is, "noise_x");
  cfg.noise_y = read_pod<double>(is, "noise_y");
  cfg.site_jitter = read_pod<double>(is, "site_jitter");
  cfg.multi_label = read_pod<std::uint8_t>(is, "multi_label") != 0;
  if (read_pod<std::uint8_t>(is, "selection flag") != 0) {
    cfg.selection_matrix = DenseArray({cfg.n_strata, cfg.n_sites});
    binio::read_doubles(is, cfg.selection_matrix.data(),
                        static_cast<std::size_t>(cfg.selection_matrix.size()),
                        "selection_matrix");
  }
  return cfg;
}

}  // namespace

void save_dataset_binary(const DatasetSplit& split, const std::string& path) {
  auto os = binio::open_out(path);
  os.write(kMagic, 4);
  binio::write_pod<std::uint16_t>(os, kVersion);
  binio::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(split.role));
  binio::write_pod<std::uint8_t>(os, split.has_latent ? 1 : 0);
  write_config(os, split.provenance);
  binio::write_pod<std::int64_t>(os, split.n());

  binio::write_doubles(os, split.x.data(),
                       static_cast<std::size_t>(split.x.size()));
  binio::write_doubles(os, split.y.data(),
                       static_cast<std::size_t>(split.y.size()));
  for (int v : split.z) binio::write_pod<std::int32_t>(os, v);
  for (int v : split.d) binio::write_pod<std::int32_t>(os, v);
  if (split.has_latent) {
    binio::write_doubles(os, split.yr.data(),
                         static_cast<std::size_t>(split.yr.size()));
    binio::write_doubles(os, split.u.data(),
                         static_cast<std::size_t>(split.u.size()));
    binio::write_doubles(os, split.a.data(),
                         static_cast<std::size_t>(split.a.size()));
  }
  if (!os) throw DataError("write failed: " + path);
}

DatasetSplit load_dataset_binary(const std::string& path) {
  auto is = binio::open_in(path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a dataset file (bad magic): " + path);
  const auto version = binio::read_pod<std::uint16_t>(is, "version");
  if (version != kVersion)
    throw DataError("unsupported dataset version " + std::to_string(version) +
                    " in " + path);

  DatasetSplit split;
  const auto role = binio::read_pod<std::uint8_t>(is, "role");
  if (role > 3) throw DataError("invalid role byte in " + path);
  split.role = static_cast<SplitRole>(role);
  split.has_latent = binio::read_pod<std::uint8_t>(is, "latent flag") != 0;
  split.provenance = read_config(is);
  const auto n = binio::read_pod<std::int64_t>(is, "record count");
  if (n < 0) throw DataError("negative record count in " + path);
  const ScmConfig& cfg = split.provenance;

  split.x = DenseArray({n, cfg.feature_dim});
  split.y = DenseArray({n, cfg.n_classes});
  binio::read_doubles(is, split.x.data(),
                      static_cast<std::size_t>(split.x.size()), "x");
  binio::read_doubles(is, split.y.data(),
                      static_cast<std::size_t>(split.y.size()), "y");
  split.z.resize(static_cast<std::size_t>(n));
  split.d.resize(static_cast<std::size_t>(n));
  for (auto& v : split.z) v = binio::read_pod<std::int32_t>(is, "z");
  for (auto& v : split.d) v = binio::read_pod<std::int32_t>(is, "d");
  if (split.has_latent) {
    split.yr = DenseArray({n, cfg.n_classes});
    split.u = DenseArray({n, cfg.u_dim});
    split.a = DenseArray({n, cfg.a_dim});
    binio::read_doubles(is, split.yr.data(),
                        static_cast<std::size_t>(split.yr.size()), "yr");
    binio::read_doubles(is, split.u.data(),
                        static_cast<std::size_t>(split.u.size()), "u");
    binio::read_doubles(is, split.a.data(),
                        static_cast<std::size_t>(split.a.size()), "a");
  }
  for (std::size_t i = 0; i < split.z.size(); ++i) {
    if (split.z[i] < 0 || split.z[i] >= cfg.n_sites || split.d[i] < 0 ||
        split.d[i] >= cfg.n_strata)
      throw DataError("id out of range at record " + std::to_string(i) +
                      " in " + path);
  }
  return split;
}

void save_dataset_text(const DatasetSplit& split, const std::string& path,
                       bool include_latent) {
  auto os = binio::open_out(path);
  const bool latent = include_latent && split.has_latent;
  std::ostringstream header;
  for (std::int64_t k = 0; k < split.x.cols(); ++k) header << "x_" << k << ",";
  for (std::int64_t c = 0; c < split.y.cols(); ++c) header << "y_" << c << ",";
  header << "z,d";
  if (latent) {
    for (std::int64_t c = 0; c < split.yr.cols(); ++c) header << ",yr_" << c;
    for (std::int64_t j = 0; j < split.u.cols(); ++j) header << ",u_" << j;
    for (std::int64_t j = 0; j < split.a.cols(); ++j) header << ",a_" << j;
  }
  os << header.str() << "\n";

  char buf[40];
  auto emit = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
  };
  for (std::int64_t i = 0; i < split.n(); ++i) {
    for (std::int64_t k = 0; k < split.x.cols(); ++k) {
      emit(split.x.at(i, k));
      os << ",";
    }
    for (std::int64_t c = 0; c < split.y.cols(); ++c) {
      emit(split.y.at(i, c));
      os << ",";
    }
    os << split.z[static_cast<std::size_t>(i)] << ","
       << split.d[static_cast<std::size_t>(i)];
    if (latent) {
      for (std::int64_t c = 0; c < split.yr.cols(); ++c) {
        os << ",";
        emit(split.yr.at(i, c));
      }
      for (std::int64_t j = 0; j < split.u.cols(); ++j) {
        os << ",";
        emit(split.u.at(i, j));
      }
      for (std::int64_t j = 0; j < split.a.cols(); ++j) {
        os << ",";
        emit(split.a.at(i, j));
      }
    }
    os << "\n";
  }
  if (!os) throw DataError("write failed: " + path);
}

DatasetSplit load_dataset_text(const std::string& path) {
  auto is = binio::open_in(path);
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty dataset file: " + path);

  int n_x = 0, n_y = 0, n_yr = 0, n_u = 0, n_a = 0;
  bool saw_z = false, saw_d = false;
  {
    std::istringstream hs(line);
    std::string col;
    while (std::getline(hs, col, ',')) {
      if (col.rfind("x_", 0) == 0) n_x += 1;
      else if (col.rfind("yr_", 0) == 0) n_yr += 1;
      else if (col.rfind("y_", 0) == 0) n_y += 1;
      else if (col.rfind("u_", 0) == 0) n_u += 1;
      else if (col.rfind("a_", 0) == 0) n_a += 1;
      else if (col == "z") saw_z = true;
      else if (col == "d") saw_d = true;
      else throw DataError("unknown column '" + col + "' in " + path);
    }
  }
  if (n_x == 0 || n_y == 0 || !saw_z || !saw_d)
    throw DataError("missing required columns in " + path);
  const bool latent = n_yr > 0;
  if (latent && (n_yr != n_y || n_u == 0 || n_a == 0))
    throw DataError("incomplete latent columns in " + path);

  std::vector<std::vector<double>> rows;
  const int total = n_x + n_y + 2 + (latent ? n_yr + n_u + n_a : 0);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(total));
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t pos = 0;
        vals.push_back(std::stod(cell, &pos));
        if (pos != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw DataError("unparseable cell '" + cell + "' in " + path);
      }
    }
    if (static_cast<int>(vals.size()) != total)
      throw DataError("row with " + std::to_string(vals.size()) +
                      " cells, expected " + std::to_string(total) + " in " +
                      path);
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw DataError("no data rows in " + path);

  DatasetSplit split;
  const auto n = static_cast<std::int64_t>(rows.size());
  split.provenance.feature_dim = n_x;
  split.provenance.n_classes = n_y;
  if (latent) {
    split.provenance.u_dim = n_u;
    split.provenance.a_dim = n_a;
  }
  split.has_latent = latent;
  split.x = DenseArray({n, n_x});
  split.y = DenseArray({n, n_y});
  split.z.resize(rows.size());
  split.d.resize(rows.size());
  if (latent) {
    split.yr = DenseArray({n, n_yr});
    split.u = DenseArray({n, n_u});
    split.a = DenseArray({n, n_a});
  }
  int max_z = 0, max_d = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& vals = rows[static_cast<std::size_t>(i)];
    std::size_t off = 0;
    for (int k = 0; k < n_x; ++k) split.x.at(i, k) = vals[off++];
    for (int c = 0; c < n_y; ++c) split.y.at(i, c) = vals[off++];
    split.z[static_cast<std::size_t>(i)] = static_cast<int>(vals[off++]);
    split.d[static_cast<std::size_t>(i)] = static_cast<int>(vals[off++]);
    if (split.z[static_cast<std::size_t>(i)] < 0 ||
        split.d[static_cast<std::size_t>(i)] < 0)
      throw DataError("negative id at row " + std::to_string(i) + " in " +
                      path);
    max_z = std::max(max_z, split.z[static_cast<std::size_t>(i)]);
    max_d = std::max(max_d, split.d[static_cast<std::size_t>(i)]);
    if (latent) {
      for (int c = 0; c < n_yr; ++c) split.yr.at(i, c) = vals[off++];
      for (int j = 0; j < n_u; ++j) split.u.at(i, j) = vals[off++];
      for (int j = 0; j < n_a; ++j) split.a.at(i, j) = vals[off++];
    }
  }
  split.provenance.n_sites = max_z + 1;
  split.provenance.n_strata = max_d + 1;
  return split;
}

}  // namespace civdg
