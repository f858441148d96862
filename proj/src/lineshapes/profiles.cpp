#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "endorkit/lineshapes.hpp"

namespace endorkit {

double fano(double f, const FanoParams& p) {
  const double e = 2.0 * (f - p.center) / p.width;
  const double qe = p.asymmetry_q + e;
  return p.amplitude * (qe * qe / (1.0 + e * e) - 1.0);
}

double lorentzian(double f, const LorentzianParams& p) {
  const double h = 0.5 * p.fwhm;
  const double d = f - p.center;
  return p.amplitude * h * h / (d * d + h * h);
}

void Spectrum::validate() const {
  if (frequencies.size() != signal.size())
    throw std::invalid_argument("spectrum: " + std::to_string(frequencies.size()) + " frequencies but " +
                                std::to_string(signal.size()) + " signal values");
  for (std::size_t k = 1; k < frequencies.size(); ++k)
    if (!(frequencies[k] > frequencies[k - 1]))
      throw std::invalid_argument("spectrum: frequencies must be strictly ascending (row " + std::to_string(k) + ")");
}

void Spectrum::set_meta(const std::string& key, double value) { meta[key] = format_double(value); }

std::optional<double> Spectrum::meta_number(const std::string& key) const {
  const auto it = meta.find(key);
  if (it == meta.end()) return std::nullopt;
  return parse_double(it->second);
}

std::vector<double> linear_grid(double start, double stop, std::size_t points) {
  if (points < 2) throw std::invalid_argument("a grid needs at least two points");
  if (!(stop > start)) throw std::invalid_argument("grid end must exceed grid start");
  std::vector<double> g(points);
  const double step = (stop - start) / static_cast<double>(points - 1);
  for (std::size_t k = 0; k < points; ++k) g[k] = start + step * static_cast<double>(k);
  g.back() = stop;
  return g;
}

void TransferTable::validate() const {
  if (knots.empty()) throw std::invalid_argument("transfer table has no knots");
  for (std::size_t k = 0; k < knots.size(); ++k) {
    if (!(knots[k].second > 0.0)) throw std::invalid_argument("transfer ratios must be positive");
    if (k > 0 && !(knots[k].first > knots[k - 1].first))
      throw std::invalid_argument("transfer table frequencies must be strictly ascending");
  }
}

TransferTable TransferTable::parse_csv(const std::string& text) {
  TransferTable table;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool header_allowed = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto comma = line.find(',');
    const auto f = comma == std::string::npos ? std::nullopt : parse_double(std::string_view(line).substr(0, comma));
    const auto r = comma == std::string::npos ? std::nullopt : parse_double(std::string_view(line).substr(comma + 1));
    if (!f || !r) {
      if (header_allowed) {
        header_allowed = false;
        continue;
      }
      throw std::invalid_argument("transfer table line " + std::to_string(line_no) + ": expected two numbers");
    }
    header_allowed = false;
    table.knots.emplace_back(*f, *r);
  }
  table.validate();
  return table;
}

TransferTable TransferTable::load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open transfer table " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str());
}

double apply_transfer(double requested_amplitude, double frequency, const TransferTable& table) {
  table.validate();
  const auto& k = table.knots;
  if (frequency <= k.front().first) return requested_amplitude * k.front().second;
  if (frequency >= k.back().first) return requested_amplitude * k.back().second;
  const auto hi = std::upper_bound(k.begin(), k.end(), frequency,
                                   [](double f, const auto& knot) { return f < knot.first; });
  const auto lo = hi - 1;
  const double t = (frequency - lo->first) / (hi->first - lo->first);
  return requested_amplitude * (lo->second + t * (hi->second - lo->second));
}

std::vector<double> boltzmann_populations(SpinQuantumNumber i_nuclear, double beta) {
  const int n = i_nuclear.multiplicity();
  std::vector<double> p(static_cast<std::size_t>(n));
  // Shift the exponent so the largest weight is 1 for either sign of beta.
  const double shift = beta >= 0.0 ? 0.0 : -beta * (n - 1);
  double total = 0.0;
  for (int k = 0; k < n; ++k) {
    p[static_cast<std::size_t>(k)] = std::exp(-beta * k - shift);
    total += p[static_cast<std::size_t>(k)];
  }
  for (double& x : p) x /= total;
  return p;
}

double boltzmann_beta(double temperature_k, double level_spacing_mhz) {
  if (!(temperature_k > 0.0)) throw std::invalid_argument("effective temperature must be positive");
  return level_spacing_mhz * constants::kPlanckOverBoltzmannKPerMHz / temperature_k;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double unit_open(std::uint64_t bits) {
  // 53 random bits mapped into (0, 1).
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

double gaussian_deviate(std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t key = splitmix64(seed ^ splitmix64(index));
  const double u1 = unit_open(splitmix64(key));
  const double u2 = unit_open(splitmix64(key + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * constants::kPi * u2);
}

Spectrum add_noise(const Spectrum& spec, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("noise sigma must be nonnegative");
  Spectrum out = spec;
  if (sigma == 0.0) return out;
  for (std::size_t k = 0; k < out.signal.size(); ++k) out.signal[k] += sigma * gaussian_deviate(seed, k);
  out.set_meta(meta_keys::kNoiseSigma, sigma);
  out.set_meta(meta_keys::kSeed, std::to_string(seed));
  return out;
}

}  // namespace endorkit
