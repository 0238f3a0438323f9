#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "civdg/dataset_io.hpp"

using namespace civdg;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("civdg_io_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

ScmConfig test_cfg() {
  ScmConfig cfg;
  cfg.seed = 77;
  cfg.selection_matrix = DenseArray({2, 5}, {0.45, 0.45, 0.0, 0.05, 0.05,
                                             0.05, 0.05, 0.0, 0.45, 0.45});
  return cfg;
}

}  // namespace

TEST_CASE("binary dataset round-trips bit-exactly") {
  TempDir tmp;
  DatasetSplit s = sample_dataset(test_cfg(), 321, SplitRole::kIdTest);
  const std::string path = tmp.file("data.civd");
  save_dataset_binary(s, path);
  DatasetSplit r = load_dataset_binary(path);

  CHECK(r.role == SplitRole::kIdTest);
  CHECK(r.has_latent);
  CHECK(r.x.bitwise_equal(s.x));
  CHECK(r.y.bitwise_equal(s.y));
  CHECK(r.z == s.z);
  CHECK(r.d == s.d);
  CHECK(r.yr.bitwise_equal(s.yr));
  CHECK(r.u.bitwise_equal(s.u));
  CHECK(r.a.bitwise_equal(s.a));
  CHECK(same_mechanism_except_selection(r.provenance, s.provenance));
  CHECK(r.provenance.selection_matrix.bitwise_equal(
      s.provenance.selection_matrix));

  // Re-saving yields byte-identical files.
  const std::string path2 = tmp.file("data2.civd");
  save_dataset_binary(r, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)),
                 std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)),
                 std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(b1.substr(0, 4) == "CIVD");
}

TEST_CASE("text dataset round-trips values exactly") {
  TempDir tmp;
  DatasetSplit s = sample_dataset(test_cfg(), 57);
  const std::string path = tmp.file("data.csv");
  save_dataset_text(s, path, true);
  DatasetSplit r = load_dataset_text(path);

  CHECK(r.n() == s.n());
  CHECK(r.has_latent);
  // 17 significant digits survive strtod exactly.
  CHECK(r.x.bitwise_equal(s.x));
  CHECK(r.y.bitwise_equal(s.y));
  CHECK(r.yr.bitwise_equal(s.yr));
  CHECK(r.u.bitwise_equal(s.u));
  CHECK(r.a.bitwise_equal(s.a));
  CHECK(r.z == s.z);
  CHECK(r.d == s.d);

  save_dataset_text(s, tmp.file("nolat.csv"), false);
  DatasetSplit r2 = load_dataset_text(tmp.file("nolat.csv"));
  CHECK(!r2.has_latent);
  CHECK(r2.x.bitwise_equal(s.x));

  std::ifstream f(path);
  std::string header;
  std::getline(f, header);
  CHECK(header.rfind("x_0,", 0) == 0);
  CHECK(header.find("y_0") != std::string::npos);
  CHECK(header.find(",z,d") != std::string::npos);
  CHECK(header.find("yr_0") != std::string::npos);
}

TEST_CASE("dataset loaders reject malformed files") {
  TempDir tmp;
  CHECK_THROWS_AS(load_dataset_binary(tmp.file("missing.civd")), DataError);
  CHECK_THROWS_AS(load_dataset_text(tmp.file("missing.csv")), DataError);

  {
    std::ofstream os(tmp.file("bad.civd"), std::ios::binary);
    os << "NOPEnonsense";
  }
  CHECK_THROWS_AS(load_dataset_binary(tmp.file("bad.civd")), DataError);

  DatasetSplit s = sample_dataset(test_cfg(), 10);
  save_dataset_binary(s, tmp.file("trunc.civd"));
  {
    std::ifstream is(tmp.file("trunc.civd"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)),
                      std::istreambuf_iterator<char>());
    std::ofstream os(tmp.file("trunc2.civd"), std::ios::binary);
    os.write(bytes.data(),
             static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_dataset_binary(tmp.file("trunc2.civd")), DataError);

  {
    std::ofstream os(tmp.file("badcol.csv"));
    os << "x_0,y_0,y_1,z,d,wat\n1,1,0,0,0,5\n";
  }
  CHECK_THROWS_AS(load_dataset_text(tmp.file("badcol.csv")), DataError);
  {
    std::ofstream os(tmp.file("badcell.csv"));
    os << "x_0,y_0,y_1,z,d\n1,one,0,0,0\n";
  }
  CHECK_THROWS_AS(load_dataset_text(tmp.file("badcell.csv")), DataError);
  {
    std::ofstream os(tmp.file("shortrow.csv"));
    os << "x_0,y_0,y_1,z,d\n1,1,0,0\n";
  }
  CHECK_THROWS_AS(load_dataset_text(tmp.file("shortrow.csv")), DataError);
}
