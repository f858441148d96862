#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "endorkit/cli.hpp"
#include "endorkit/io.hpp"

using namespace endorkit;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliDir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("endorkit_cli_" + std::string(info->test_suite_name()) + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ::unsetenv(kConfigEnvVar);
  }
  void TearDown() override {
    ::unsetenv(kConfigEnvVar);
    fs::remove_all(dir_);
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  void write(const std::string& name, const std::string& text) const { std::ofstream(dir_ / name) << text; }

  fs::path dir_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return k;
    throw std::out_of_range("no column " + name);
  }
  double number(std::size_t row, const std::string& name) const { return std::stod(rows.at(row).at(column(name))); }
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

CsvTable read_table(const std::string& text) {
  CsvTable t;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (t.header.empty())
      t.header = split(line);
    else
      t.rows.push_back(split(line));
  }
  return t;
}

CsvTable read_table_file(const std::string& path) { return read_table(read_text_file(path)); }

// The esr channel also lists nuclear transitions whose electron-operator
// weight clears the floor through state mixing; keep only the ESR rows.
CsvTable esr_rows(CsvTable t) {
  std::erase_if(t.rows, [](const auto& row) { return row.at(0) != "esr"; });
  return t;
}

}  // namespace

// ---------------------------------------------------------------- spectrum IO

TEST(SpectrumCsv, RoundTripIsBitIdentical) {
  Spectrum s;
  s.frequencies = {-1e300, -0.0, 5e-324, 0.1, 1.0 / 3.0, 3727.293378347117, 1e308};
  s.signal = {1.0 / 7.0, -2.2250738585072014e-308, 0.0, -0.0, 6.02214076e23, -1.5, 4.9406564584124654e-324};
  s.set_meta(meta_keys::kBz, 0.45);
  s.set_meta(meta_keys::kKind, "endor");
  s.set_meta("note", "free text, with comma");
  const Spectrum back = parse_spectrum_csv(format_spectrum_csv(s));
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back.frequencies[k]), std::bit_cast<std::uint64_t>(s.frequencies[k]));
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back.signal[k]), std::bit_cast<std::uint64_t>(s.signal[k]));
  }
  EXPECT_EQ(back.meta, s.meta);
  EXPECT_EQ(format_spectrum_csv(back), format_spectrum_csv(s));
}

TEST(SpectrumCsv, MetadataNumbersReadBack) {
  Spectrum s;
  s.frequencies = {1.0, 2.0};
  s.signal = {0.0, 1.0};
  s.set_meta(meta_keys::kBz, 1.2000000000000002);
  const Spectrum back = parse_spectrum_csv(format_spectrum_csv(s));
  ASSERT_TRUE(back.meta_number(meta_keys::kBz));
  EXPECT_EQ(*back.meta_number(meta_keys::kBz), 1.2000000000000002);
}

TEST(SpectrumCsv, FreeFormCommentsAreIgnored) {
  const Spectrum s = parse_spectrum_csv("# exported by hand\n# b_z_tesla=0.6\nfrequency_MHz,signal\n1,2\n3,4\n");
  EXPECT_EQ(s.size(), 2u);
  EXPECT_EQ(s.meta.size(), 1u);
  EXPECT_EQ(*s.meta_number(meta_keys::kBz), 0.6);
}

TEST(SpectrumCsv, MalformedInputNamesSourceAndLine) {
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"frequency_MHz,signal\n1,2\n3,abc\n", "bad.csv:3:"},
      {"frequency_MHz,signal\n1,2,3\n", "bad.csv:2: expected two"},
      {"freq,signal\n1,2\n", "bad.csv:1:"},
      {"frequency_MHz,signal\n2,1\n1,1\n", "ascending"},
      {"# only a comment\n", "header"},
      {"frequency_MHz,signal\n1,nan\n", "bad.csv:2: non-finite"},
  };
  for (const auto& [text, where] : cases) {
    try {
      parse_spectrum_csv(text, "bad.csv");
      ADD_FAILURE() << "accepted: " << text;
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find("bad.csv"), std::string::npos) << e.what();
      if (!where.empty()) EXPECT_NE(std::string(e.what()).find(where), std::string::npos) << e.what();
    }
  }
}

TEST(SpectrumCsv, WriterRejectsKeysThatCannotRoundTrip) {
  Spectrum s;
  s.frequencies = {1.0};
  s.signal = {1.0};
  s.set_meta("a=b", 1.0);
  EXPECT_THROW(format_spectrum_csv(s), std::invalid_argument);
}

TEST_F(CliDir, AtomicWriteCreatesParentsAndLeavesNoTemporaries) {
  const fs::path target = dir_ / "a" / "b" / "out.txt";
  write_file_atomic(target, "first");
  write_file_atomic(target, "second");
  EXPECT_EQ(read_text_file(target), "second");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(target.parent_path())) ++entries;
  EXPECT_EQ(entries, 1u);
}

TEST_F(CliDir, SpectrumFileRoundTrip) {
  Spectrum s;
  s.frequencies = linear_grid(30.0, 110.0, 801);
  for (double f : s.frequencies) s.signal.push_back(std::sin(f) / 3.0);
  s.set_meta(meta_keys::kBz, 0.8);
  write_spectrum(path("s.csv"), s);
  const Spectrum back = read_spectrum(path("s.csv"));
  EXPECT_EQ(back.frequencies, s.frequencies);
  EXPECT_EQ(back.signal, s.signal);
  EXPECT_THROW(read_spectrum(path("missing.csv")), FormatError);
}

TEST(MapCsv, AxesAndColumnMeans) {
  const std::vector<double> rows{1.0, 2.0, 3.0}, cols{10.0, 20.0};
  const std::vector<std::vector<double>> v{{1.0, 4.0}, {2.0, 5.0}, {6.0, 9.0}};
  const CsvTable t = read_table(format_map_csv("r\\c", rows, cols, v));
  ASSERT_EQ(t.header, (std::vector<std::string>{"r\\c", "10", "20"}));
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[2][0], "3");
  EXPECT_EQ(t.rows[2][2], "9");
  const auto centered = subtract_column_means(v);
  for (std::size_t c = 0; c < 2; ++c) {
    double sum = 0.0;
    for (const auto& r : centered) sum += r[c];
    EXPECT_NEAR(sum, 0.0, 1e-12);
  }
  EXPECT_DOUBLE_EQ(centered[0][0], 1.0 - 3.0);
}

// ---------------------------------------------------------------- config

TEST(Config, DefaultsSurviveSerialization) {
  const RunConfig a;
  const RunConfig b = parse_config(config_to_json(a));
  EXPECT_EQ(config_to_json(a), config_to_json(b));
  EXPECT_EQ(b.spin_system.a_hyperfine, a.spin_system.a_hyperfine);
  EXPECT_DOUBLE_EQ(b.field.phi, a.field.phi);
}

TEST(Config, PartialFileKeepsDefaults) {
  const RunConfig c = parse_config(R"({"spin_system": {"kappa_mhz": -40}, "seed": 7})");
  EXPECT_EQ(c.spin_system.kappa, -40.0);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.spin_system.a_hyperfine, RunConfig{}.spin_system.a_hyperfine);
}

TEST(Config, ErrorsCarryTheKeyPath) {
  const std::vector<std::pair<std::string, std::string>> cases = {
      {R"({"spin_system": {"a_z_mhz": 1}})", "spin_system.a_z_mhz"},
      {R"({"bogus": 1})", "bogus"},
      {R"({"field": {"b_tip_tesla": "high"}})", "field.b_tip_tesla"},
      {R"({"spin_system": {"i_nuclear": 0.7}})", "spin_system.i_nuclear"},
      {R"({"spin_system": {"g_e": [1, 2]}})", "spin_system.g_e"},
      {R"({"pump": {"gamma_e_down_per_s": -1}})", "pump"},
      {R"({"calibration": {"max_iterations": 0}})", "calibration.max_iterations"},
      {R"({"lineshape": {"observable": "voltage"}})", "lineshape.observable"},
      {R"({"seed": -3})", "seed"},
      {R"({"pump": {"nmr_pair": {"a": {"m_s": -0.5, "m_i": -2.5}}}})", "pump.nmr_pair.b"},
      {"{not json", "not valid JSON"},
  };
  for (const auto& [text, key] : cases) {
    try {
      parse_config(text);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
  }
}

TEST_F(CliDir, EnvironmentVariableSuppliesDefaultConfig) {
  write("env.json", R"({"seed": 11})");
  write("explicit.json", R"({"seed": 12})");
  EXPECT_EQ(resolve_config(std::nullopt).seed, RunConfig{}.seed);
  ::setenv(kConfigEnvVar, path("env.json").c_str(), 1);
  EXPECT_EQ(resolve_config(std::nullopt).seed, 11u);
  EXPECT_EQ(resolve_config(fs::path(path("explicit.json"))).seed, 12u);
}

TEST_F(CliDir, RelativeTransferTableResolvesNextToConfig) {
  write("cfg.json", R"({"transfer_table": "tt.csv"})");
  const RunConfig c = load_config(path("cfg.json"));
  ASSERT_TRUE(c.transfer_table);
  EXPECT_EQ(*c.transfer_table, dir_ / "tt.csv");
}

TEST_F(CliDir, InvalidConfigExitsWithInputError) {
  write("bad.json", R"({"field": {"phi_deg": "five"}})");
  const Outcome r = run_cli({"--config", path("bad.json"), "predict", "-o", "-"});
  EXPECT_EQ(r.code, cli::kInputError);
  EXPECT_NE(r.err.find("field.phi_deg"), std::string::npos) << r.err;
  EXPECT_EQ(run_cli({"--config", path("absent.json"), "predict"}).code, cli::kInputError);
}

// ---------------------------------------------------------------- predict

TEST(Predict, NmrLinesAtDefaultField) {
  const Outcome r = run_cli({"predict", "--channel", "nmr", "-o", "-"});
  ASSERT_EQ(r.code, 0) << r.err;
  const CsvTable t = read_table(r.out);
  double f1 = 0.0, f2 = 0.0;
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    if (t.rows[k][0] == "I") f1 = t.number(k, "frequency_MHz");
    if (t.rows[k][0] == "II") f2 = t.number(k, "frequency_MHz");
  }
  EXPECT_NEAR(f1, 49.3, 3.0);
  EXPECT_NEAR(f2, 85.0, 3.0);
  for (std::size_t k = 1; k < t.rows.size(); ++k)
    EXPECT_LE(t.number(k - 1, "frequency_MHz"), t.number(k, "frequency_MHz"));
}

TEST_F(CliDir, EsrChannelWithoutNuclearSpinHasOneLine) {
  write("i0.json", R"({"spin_system": {"i_nuclear": 0, "kappa_mhz": 0}})");
  const Outcome r = run_cli({"-c", path("i0.json"), "predict", "--channel", "esr", "-o", "-"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_table(r.out).rows.size(), 1u);
}

TEST(Predict, HugeWeightFloorGivesEmptyTable) {
  const Outcome r = run_cli({"predict", "--weight-floor", "1e9", "-o", "-"});
  EXPECT_EQ(r.code, 0);
  const CsvTable t = read_table(r.out);
  EXPECT_FALSE(t.header.empty());
  EXPECT_TRUE(t.rows.empty());
}

TEST(Predict, DoubleQuantumLinesAreSumsOfSingleSteps) {
  const CsvTable nmr = read_table(run_cli({"predict", "--channel", "nmr", "-o", "-"}).out);
  const CsvTable dq = read_table(run_cli({"predict", "--channel", "dq", "-o", "-"}).out);
  ASSERT_FALSE(dq.rows.empty());
  for (std::size_t k = 0; k < dq.rows.size(); ++k) {
    const double ms = dq.number(k, "from_ms"), lo = std::min(dq.number(k, "from_mi"), dq.number(k, "to_mi"));
    double sum = 0.0;
    int found = 0;
    for (std::size_t j = 0; j < nmr.rows.size(); ++j) {
      if (nmr.rows[j][0] == "esr" || nmr.number(j, "from_ms") != ms) continue;
      const double a = std::min(nmr.number(j, "from_mi"), nmr.number(j, "to_mi"));
      if (a == lo || a == lo + 1.0) {
        sum += nmr.number(j, "frequency_MHz");
        ++found;
      }
    }
    ASSERT_EQ(found, 2);
    EXPECT_NEAR(dq.number(k, "frequency_MHz"), sum, 1e-9);
  }
}

TEST_F(CliDir, DefaultOutputGoesToConfiguredDirectory) {
  write("cfg.json", R"({"output_dir": ")" + path("out") + R"("})");
  ASSERT_EQ(run_cli({"-c", path("cfg.json"), "predict"}).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "lines.csv"));
}

// ---------------------------------------------------------------- sweep

TEST(Sweep, EndpointsMatchPredict) {
  const Outcome r = run_cli({"sweep", "--b-start", "0.3", "--b-end", "0.9", "--steps", "2", "-o", "-"});
  ASSERT_EQ(r.code, 0) << r.err;
  const CsvTable t = read_table(r.out);
  ASSERT_EQ(t.rows.size(), 2u);
  for (std::size_t row = 0; row < 2; ++row) {
    const std::string b = row == 0 ? "0.3" : "0.9";
    const CsvTable p = read_table(run_cli({"predict", "--channel", "nmr", "--b-z", b, "-o", "-"}).out);
    for (std::size_t k = 0; k < p.rows.size(); ++k) {
      if (p.rows[k][0] == "esr") continue;
      EXPECT_NEAR(t.number(row, "nmr_" + p.rows[k][0] + "_MHz"), p.number(k, "frequency_MHz"), 1e-9);
    }
  }
}

TEST(Sweep, TransitionOneMonotoneAndHybridizationFalls) {
  const Outcome r = run_cli({"sweep", "--b-start", "0.2", "--b-end", "1.4", "--steps", "25", "-o", "-"});
  ASSERT_EQ(r.code, 0) << r.err;
  const CsvTable t = read_table(r.out);
  ASSERT_EQ(t.rows.size(), 25u);
  for (std::size_t k = 1; k < t.rows.size(); ++k) {
    EXPECT_LT(t.number(k, "nmr_I_MHz"), t.number(k - 1, "nmr_I_MHz"));
    EXPECT_LT(t.number(k, "hybridization"), t.number(k - 1, "hybridization"));
  }
}

TEST(Sweep, BadRangesAreInputErrors) {
  EXPECT_EQ(run_cli({"sweep", "--b-start", "1.0", "--b-end", "0.5", "-o", "-"}).code, cli::kInputError);
  EXPECT_EQ(run_cli({"sweep", "--steps", "1", "-o", "-"}).code, cli::kInputError);
}

// ---------------------------------------------------------------- simulate

TEST_F(CliDir, EndorWithoutNmrDriveIsFlat) {
  write("off.json", R"({"pump": {"omega_nmr_per_s": 0}})");
  ASSERT_EQ(run_cli({"-c", path("off.json"), "simulate", "endor", "-o", path("e.csv")}).code, 0);
  const Spectrum s = read_spectrum(path("e.csv"));
  ASSERT_GT(s.size(), 100u);
  for (double y : s.signal) EXPECT_EQ(y, s.signal.front());
}

TEST_F(CliDir, EndorDipsAtTransitionsLeavingTheReadoutState) {
  ASSERT_EQ(run_cli({"simulate", "endor", "-o", path("e.csv")}).code, 0);
  const Spectrum s = read_spectrum(path("e.csv"));
  const CsvTable lines = read_table(run_cli({"predict", "--channel", "nmr", "-o", "-"}).out);
  auto freq = [&](const std::string& label) {
    for (std::size_t k = 0; k < lines.rows.size(); ++k)
      if (lines.rows[k][0] == label) return lines.number(k, "frequency_MHz");
    return std::numeric_limits<double>::quiet_NaN();
  };
  // Deepest point, then the deepest point at least 10 MHz away from it.
  std::size_t a = 0;
  for (std::size_t k = 0; k < s.size(); ++k)
    if (s.signal[k] < s.signal[a]) a = k;
  std::size_t b = a == 0 ? 1 : 0;
  for (std::size_t k = 0; k < s.size(); ++k)
    if (std::abs(s.frequencies[k] - s.frequencies[a]) > 10.0 && s.signal[k] < s.signal[b]) b = k;
  EXPECT_NEAR(s.frequencies[a], freq("I"), 0.2);
  EXPECT_NEAR(s.frequencies[b], freq("II"), 0.2);
}

TEST_F(CliDir, SameSeedGivesIdenticalFiles) {
  for (const char* name : {"a.csv", "b.csv"})
    ASSERT_EQ(run_cli({"simulate", "esr", "--noise-sigma", "0.01", "--seed", "5", "-o", path(name)}).code, 0);
  EXPECT_EQ(read_text_file(path("a.csv")), read_text_file(path("b.csv")));
  ASSERT_EQ(run_cli({"simulate", "esr", "--noise-sigma", "0.01", "--seed", "6", "-o", path("c.csv")}).code, 0);
  EXPECT_NE(read_text_file(path("a.csv")), read_text_file(path("c.csv")));
}

TEST_F(CliDir, EndorMapWritesMatrixAndCenteredVariant) {
  const Outcome r = run_cli({"simulate", "endor-map", "--nmr-start", "40", "--nmr-stop", "90", "--nmr-step", "1",
                             "--esr-step", "20", "--noise-sigma", "1e-4", "-o", path("map.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const CsvTable raw = read_table_file(path("map.csv"));
  const CsvTable centered = read_table_file(path("map_colmean.csv"));
  ASSERT_EQ(raw.rows.size(), 51u);
  ASSERT_EQ(raw.header.size(), centered.header.size());
  const CsvTable lines = esr_rows(read_table(run_cli({"predict", "--channel", "esr", "-o", "-"}).out));
  EXPECT_LT(std::stod(raw.header[1]), lines.number(0, "frequency_MHz"));
  EXPECT_GT(std::stod(raw.header.back()), lines.number(2, "frequency_MHz"));
  for (std::size_t c = 1; c < centered.header.size(); ++c) {
    double sum = 0.0;
    for (const auto& row : centered.rows) sum += std::stod(row[c]);
    EXPECT_NEAR(sum, 0.0, 1e-9);
  }
}

TEST_F(CliDir, TransferTableScalesEsrSignal) {
  write("tt.csv", "frequency_MHz,ratio\n0,0.5\n10000,0.5\n");
  write("cfg.json", R"({"transfer_table": "tt.csv"})");
  ASSERT_EQ(run_cli({"simulate", "esr", "-o", path("full.csv")}).code, 0);
  ASSERT_EQ(run_cli({"-c", path("cfg.json"), "simulate", "esr", "-o", path("half.csv")}).code, 0);
  const Spectrum full = read_spectrum(path("full.csv")), half = read_spectrum(path("half.csv"));
  ASSERT_EQ(full.size(), half.size());
  for (std::size_t k = 0; k < full.size(); k += 50) EXPECT_DOUBLE_EQ(half.signal[k], 0.5 * full.signal[k]);
  write("missing.json", R"({"transfer_table": "nope.csv"})");
  EXPECT_EQ(run_cli({"-c", path("missing.json"), "simulate", "esr", "-o", path("x.csv")}).code, cli::kInputError);
}

TEST(Simulate, UnknownModeIsInputError) {
  EXPECT_EQ(run_cli({"simulate", "nmr"}).code, cli::kInputError);
  EXPECT_EQ(run_cli({"simulate", "endor", "--nmr-step", "0", "-o", "-"}).code, cli::kInputError);
}

// ---------------------------------------------------------------- fit

TEST_F(CliDir, SimulatedEsrFitsBackToGeneratorLines) {
  ASSERT_EQ(run_cli({"simulate", "esr", "--noise-sigma", "0.002", "-o", path("esr.csv")}).code, 0);
  const Outcome r = run_cli({"fit", "esr", "-i", path("esr.csv"), "-o", path("fit.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json report = json::parse(read_text_file(path("fit.json")));
  const CsvTable lines = esr_rows(read_table(run_cli({"predict", "--channel", "esr", "-o", "-"}).out));
  ASSERT_EQ(report["peaks"].size(), lines.rows.size());
  for (std::size_t k = 0; k < lines.rows.size(); ++k)
    EXPECT_NEAR(report["peaks"][k]["center_mhz"].get<double>(), lines.number(k, "frequency_MHz"), 0.5);
  EXPECT_TRUE(report["converged"].get<bool>());
  EXPECT_NEAR(report["b_z_tesla"].get<double>(), 0.45, 1e-15);
}

TEST_F(CliDir, ConstantSpectrumDoesNotConverge) {
  std::string text = "# b_z_tesla=0.45\nfrequency_MHz,signal\n";
  for (int k = 0; k < 400; ++k) text += std::to_string(3600 + k) + ",0.25\n";
  write("flat.csv", text);
  const Outcome r = run_cli({"fit", "esr", "-i", path("flat.csv"), "-o", path("fit.json")});
  EXPECT_EQ(r.code, cli::kNotConverged);
  ASSERT_TRUE(fs::exists(path("fit.json")));
  EXPECT_FALSE(json::parse(read_text_file(path("fit.json")))["converged"].get<bool>());
}

TEST_F(CliDir, TooFewPeaksRaisesMisfitWarning) {
  write("i2.json", R"({"spin_system": {"i_nuclear": 2}})");
  ASSERT_EQ(run_cli({"-c", path("i2.json"), "simulate", "esr", "--noise-sigma", "0.001", "-o", path("esr.csv")}).code,
            0);
  const Outcome r = run_cli({"fit", "esr", "-i", path("esr.csv"), "-n", "4", "--constraint", "free", "-o",
                             path("fit.json")});
  const json report = json::parse(read_text_file(path("fit.json")));
  ASSERT_FALSE(report["warnings"].empty()) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST_F(CliDir, MalformedFitInputIsInputError) {
  write("bad.csv", "frequency_MHz,signal\n1,x\n");
  EXPECT_EQ(run_cli({"fit", "nmr", "-i", path("bad.csv"), "-o", "-"}).code, cli::kInputError);
  EXPECT_EQ(run_cli({"fit", "nmr", "-i", path("absent.csv"), "-o", "-"}).code, cli::kInputError);
  EXPECT_EQ(run_cli({"fit", "esr"}).code, cli::kInputError);
}

TEST_F(CliDir, EndorFitLabelsDipsByModel) {
  ASSERT_EQ(run_cli({"simulate", "endor", "--noise-sigma", "2e-4", "-o", path("e.csv")}).code, 0);
  const Outcome r = run_cli({"fit", "nmr", "-i", path("e.csv"), "-o", path("fit.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json report = json::parse(read_text_file(path("fit.json")));
  ASSERT_EQ(report["peaks"].size(), 2u);
  EXPECT_EQ(report["peaks"][0]["label"], "I");
  EXPECT_EQ(report["peaks"][1]["label"], "II");
}

// ---------------------------------------------------------------- calibrate

class Calibrate : public CliDir {
 protected:
  void make_dataset(const std::vector<std::string>& fields = {}) {
    std::vector<std::string> args{"make-dataset", "--out-dir", path("ds")};
    if (!fields.empty()) {
      args.push_back("--fields");
      args.insert(args.end(), fields.begin(), fields.end());
    }
    const Outcome r = run_cli(args);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  std::string esr_glob() const { return path("ds/esr_*.csv"); }
  std::string nmr_glob() const { return path("ds/endor_*.csv"); }
};

TEST_F(Calibrate, DatasetRecoversGeneratorParameters) {
  make_dataset();
  const Outcome r = run_cli({"calibrate", "--esr", esr_glob(), "--nmr", nmr_glob(), "-o", path("cal.json"),
                             "--config-out", path("cc.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(read_text_file(path("cal.json")));
  const auto& p = j["parameters"];
  const RunConfig truth;
  EXPECT_LE(j["iterations"].get<int>(), 5);
  EXPECT_NEAR(p["g_e_z"]["value"].get<double>(), truth.spin_system.g_e[2], 0.02 * truth.spin_system.g_e[2]);
  const double btz = truth.field.b_tip * std::cos(truth.field.phi);
  EXPECT_NEAR(p["b_tip_z_tesla"]["value"].get<double>(), btz, 0.02 * btz);
  EXPECT_NEAR(p["a_z_mhz"]["value"].get<double>(), truth.spin_system.a_hyperfine[2], 1.321);
  EXPECT_NEAR(p["kappa_mhz"]["value"].get<double>(), truth.spin_system.kappa, 0.05 * std::abs(truth.spin_system.kappa));
  EXPECT_EQ(j["inputs"]["esr_files"].size(), 7u);
  EXPECT_EQ(j["residuals"]["zeeman"].size(), 7u);
  EXPECT_EQ(j["residuals"]["tip_field"].size(), 42u);
  EXPECT_FALSE(j["residuals"]["hyperfine"].empty());
  for (const auto& row : j["residuals"]["hyperfine"]) EXPECT_LT(std::abs(row["residual_mhz"].get<double>()), 0.5);

  const RunConfig calibrated = load_config(path("cc.json"));
  EXPECT_EQ(calibrated.spin_system.a_hyperfine[2], p["a_z_mhz"]["value"].get<double>());
}

TEST_F(Calibrate, RerunOnOwnConfigIsIdentical) {
  make_dataset();
  ASSERT_EQ(run_cli({"calibrate", "--esr", esr_glob(), "--nmr", nmr_glob(), "-o", path("a.json"), "--config-out",
                     path("ca.json")})
                .code,
            0);
  ASSERT_EQ(run_cli({"-c", path("ca.json"), "calibrate", "--esr", esr_glob(), "--nmr", nmr_glob(), "-o",
                     path("b.json"), "--config-out", path("cb.json")})
                .code,
            0);
  EXPECT_EQ(read_text_file(path("a.json")), read_text_file(path("b.json")));
  EXPECT_EQ(read_text_file(path("ca.json")), read_text_file(path("cb.json")));
}

TEST_F(Calibrate, SingleFieldIsPartial) {
  make_dataset({"0.45"});
  const Outcome r = run_cli({"calibrate", "--esr", esr_glob(), "--nmr", nmr_glob(), "-o", path("cal.json"),
                             "--config-out", path("cc.json")});
  EXPECT_EQ(r.code, cli::kNotConverged);
  ASSERT_TRUE(fs::exists(path("cal.json")));
  EXPECT_TRUE(json::parse(read_text_file(path("cal.json")))["partial"].get<bool>());
  EXPECT_FALSE(fs::exists(path("cc.json")));
}

TEST_F(Calibrate, MissingFieldMetadataNamesTheFile) {
  make_dataset({"0.4", "0.8"});
  write("ds/esr_x.csv", "frequency_MHz,signal\n1,1\n2,2\n");
  const Outcome r = run_cli({"calibrate", "--esr", esr_glob(), "-o", path("cal.json")});
  EXPECT_EQ(r.code, cli::kInputError);
  EXPECT_NE(r.err.find("esr_x.csv"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("b_z_tesla"), std::string::npos) << r.err;
}

TEST_F(Calibrate, EmptyGlobIsInputError) {
  EXPECT_EQ(run_cli({"calibrate", "--esr", path("none_*.csv")}).code, cli::kInputError);
  make_dataset({"0.4", "0.8"});
  EXPECT_EQ(run_cli({"calibrate", "--esr", esr_glob(), "--nmr", path("none_*.csv")}).code, cli::kInputError);
}

TEST_F(Calibrate, MakeDatasetIsDeterministic) {
  make_dataset({"0.6"});
  const std::string first = read_text_file(path("ds/endor_0.6T.csv"));
  make_dataset({"0.6"});
  EXPECT_EQ(read_text_file(path("ds/endor_0.6T.csv")), first);
  EXPECT_NE(first.find("b_z_tesla=0.6"), std::string::npos);
}

// ---------------------------------------------------------------- exit codes

TEST(ExitCodes, HelpAndUsageErrors) {
  EXPECT_EQ(run_cli({"--help"}).code, 0);
  EXPECT_EQ(run_cli({}).code, cli::kInputError);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kInputError);
  EXPECT_EQ(run_cli({"predict", "--channel", "uv"}).code, cli::kInputError);
  EXPECT_EQ(run_cli({"predict", "--b-z", "abc"}).code, cli::kInputError);
}
