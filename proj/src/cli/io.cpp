#include "endorkit/io.hpp"

#include <cmath>
#include <unistd.h>

#include <fstream>
#include <sstream>

namespace endorkit {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw std::runtime_error("write to " + tmp.string() + " failed");
    }
  }
  fs::rename(tmp, path);
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

constexpr std::string_view kColumns = "frequency_MHz,signal";

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string format_spectrum_csv(const Spectrum& spec) {
  spec.validate();
  std::string out;
  for (const auto& [key, value] : spec.meta) {
    if (key.empty() || key.find_first_of("=\n\r") != std::string::npos || value.find_first_of("\n\r") != std::string::npos)
      throw std::invalid_argument("metadata entry '" + key + "' cannot be written on one header line");
    out += "# " + key + "=" + value + "\n";
  }
  out += kColumns;
  out += '\n';
  for (std::size_t k = 0; k < spec.size(); ++k)
    out += format_double(spec.frequencies[k]) + "," + format_double(spec.signal[k]) + "\n";
  return out;
}

Spectrum parse_spectrum_csv(std::string_view text, const std::string& source) {
  Spectrum spec;
  bool header_seen = false;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw FormatError(source + ":" + std::to_string(line_no) + ": " + what);
  };
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;
    if (line.front() == '#') {
      if (header_seen) fail("metadata after the column header");
      std::string_view body = line.substr(1);
      if (!body.empty() && body.front() == ' ') body.remove_prefix(1);
      const std::size_t eq = body.find('=');
      if (eq == std::string_view::npos) continue;  // free-form comment
      const std::string key(trim(body.substr(0, eq)));
      if (key.empty()) fail("metadata line without a key");
      spec.meta[key] = std::string(body.substr(eq + 1));
      continue;
    }
    if (!header_seen) {
      if (trim(line) != kColumns) fail("expected column header '" + std::string(kColumns) + "'");
      header_seen = true;
      continue;
    }
    const std::size_t comma = line.find(',');
    if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos)
      fail("expected two comma-separated columns");
    const auto f = parse_double(line.substr(0, comma));
    const auto s = parse_double(line.substr(comma + 1));
    if (!f || !s) fail("non-numeric value");
    if (!std::isfinite(*f) || !std::isfinite(*s)) fail("non-finite value");
    spec.frequencies.push_back(*f);
    spec.signal.push_back(*s);
  }
  if (!header_seen) throw FormatError(source + ": missing column header '" + std::string(kColumns) + "'");
  if (spec.size() == 0) throw FormatError(source + ": no data rows");
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(source + ": " + e.what());
  }
  return spec;
}

void write_spectrum(const fs::path& path, const Spectrum& spec) { write_file_atomic(path, format_spectrum_csv(spec)); }

Spectrum read_spectrum(const fs::path& path) { return parse_spectrum_csv(read_text_file(path), path.string()); }

std::string format_map_csv(const std::string& corner_label, std::span<const double> row_axis,
                           std::span<const double> col_axis, const std::vector<std::vector<double>>& values) {
  if (values.size() != row_axis.size()) throw std::invalid_argument("map has a different row count than its axis");
  std::string out = corner_label;
  for (double c : col_axis) out += "," + format_double(c);
  out += '\n';
  for (std::size_t r = 0; r < row_axis.size(); ++r) {
    if (values[r].size() != col_axis.size()) throw std::invalid_argument("map row length differs from the column axis");
    out += format_double(row_axis[r]);
    for (double v : values[r]) out += "," + format_double(v);
    out += '\n';
  }
  return out;
}

std::vector<std::vector<double>> subtract_column_means(const std::vector<std::vector<double>>& values) {
  auto out = values;
  if (values.empty()) return out;
  const std::size_t cols = values.front().size();
  for (std::size_t c = 0; c < cols; ++c) {
    double mean = 0.0;
    for (const auto& row : values) mean += row.at(c);
    mean /= static_cast<double>(values.size());
    for (auto& row : out) row[c] -= mean;
  }
  return out;
}

std::string format_lines_csv(const std::vector<TransitionLine>& lines) {
  std::string out = "label,frequency_MHz,weight,delta_ms,delta_mi,from_ms,from_mi,to_ms,to_mi\n";
  for (const auto& l : lines) {
    std::string label = l.numeral ? roman_numeral(*l.numeral) : (l.from_label.ms() != l.to_label.ms() ? "esr" : "nmr");
    out += label + "," + format_double(l.frequency) + "," + format_double(l.weight) + "," +
           format_double(l.delta_ms) + "," + format_double(l.delta_mi) + "," + format_double(l.from_label.ms()) +
           "," + format_double(l.from_label.mi()) + "," + format_double(l.to_label.ms()) + "," +
           format_double(l.to_label.mi()) + "\n";
  }
  return out;
}

}  // namespace endorkit
