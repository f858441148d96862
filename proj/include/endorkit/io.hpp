#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "endorkit/lineshapes.hpp"

namespace endorkit {

/// Malformed file content; the message names the file and line when known.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes to a sibling temporary file and renames it over the target, so an
/// interrupted run leaves either the old file or the complete new one.
/// Parent directories are created as needed.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

/// `# key=value` metadata lines, a `frequency_MHz,signal` header and one row
/// per point. Numbers use the shortest representation that reads back to
/// the same double.
std::string format_spectrum_csv(const Spectrum& spec);
Spectrum parse_spectrum_csv(std::string_view text, const std::string& source = "spectrum");
void write_spectrum(const std::filesystem::path& path, const Spectrum& spec);
Spectrum read_spectrum(const std::filesystem::path& path);

/// Matrix with axes: the first row holds corner_label and the column axis,
/// every further row its row-axis value followed by values[row][col].
std::string format_map_csv(const std::string& corner_label, std::span<const double> row_axis,
                           std::span<const double> col_axis, const std::vector<std::vector<double>>& values);

/// Copy of values with the mean of each column subtracted.
std::vector<std::vector<double>> subtract_column_means(const std::vector<std::vector<double>>& values);

std::string format_lines_csv(const std::vector<TransitionLine>& lines);

}  // namespace endorkit
