#include "ksve/telemetry.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace ksve {

void WindowConfig::validate() const {
  if (tau < 0) throw std::invalid_argument("window.tau must be >= 0");
  if (!(tau + 2 < S_tilde)) throw std::invalid_argument("window.S_tilde must exceed tau + 2");
  if (!(S_tilde < S)) throw std::invalid_argument("window.S must exceed window.S_tilde");
  if (!(dt_s > 0.0)) throw std::invalid_argument("window.dt_s must be positive");
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& text, const std::string& column, long row) {
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    throw TelemetryParseError("row " + std::to_string(row) + ": column " + column +
                                  " is not a number: '" + text + "'",
                              row);
  }
  if (used != text.size() && text.find_first_not_of(" \r", used) != std::string::npos) {
    throw TelemetryParseError(
        "row " + std::to_string(row) + ": trailing characters in column " + column, row);
  }
  if (!std::isfinite(value)) {
    throw TelemetryParseError("row " + std::to_string(row) + ": non-finite value in column " + column,
                              row);
  }
  return value;
}

}  // namespace

void write_stream(const TelemetryStream& stream, std::ostream& out) {
  const int m = stream.modules();
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "t_s,current_a,soc_true";
  for (int i = 1; i <= m; ++i) out << ",v_true_" << i;
  for (int i = 1; i <= m; ++i) out << ",v_meas_" << i;
  out << '\n';
  for (const auto& f : stream.frames) {
    out << f.t_s << ',' << f.current_a << ',' << f.soc_true;
    for (int i = 0; i < m; ++i) out << ',' << f.v_true(i);
    for (int i = 0; i < m; ++i) out << ',' << f.v_meas(i);
    out << '\n';
  }
}

void write_stream(const TelemetryStream& stream, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_stream(stream, out);
}

TelemetryStream read_stream(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw TelemetryParseError("empty telemetry file", 0);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);

  int m = 0;
  while (true) {
    const std::string name = "v_true_" + std::to_string(m + 1);
    bool found = false;
    for (const auto& h : header) found = found || h == name;
    if (!found) break;
    ++m;
  }
  std::vector<std::string> expected = {"t_s", "current_a", "soc_true"};
  for (int i = 1; i <= m; ++i) expected.push_back("v_true_" + std::to_string(i));
  for (int i = 1; i <= m; ++i) expected.push_back("v_meas_" + std::to_string(i));
  if (m == 0) throw TelemetryParseError("header: missing column v_true_1", 1);
  for (std::size_t c = 0; c < expected.size(); ++c) {
    if (c >= header.size() || header[c] != expected[c]) {
      throw TelemetryParseError("header: missing column " + expected[c], 1);
    }
  }
  if (header.size() != expected.size()) {
    throw TelemetryParseError("header: unexpected column " + header[expected.size()], 1);
  }

  TelemetryStream stream;
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != expected.size()) {
      throw TelemetryParseError("row " + std::to_string(row) + ": expected " +
                                    std::to_string(expected.size()) + " columns, got " +
                                    std::to_string(cells.size()),
                                row);
    }
    TelemetryFrame f;
    f.t_s = parse_number(cells[0], expected[0], row);
    f.current_a = parse_number(cells[1], expected[1], row);
    f.soc_true = parse_number(cells[2], expected[2], row);
    f.v_true.resize(m);
    f.v_meas.resize(m);
    for (int i = 0; i < m; ++i) {
      f.v_true(i) = parse_number(cells[3 + i], expected[3 + i], row);
      f.v_meas(i) = parse_number(cells[3 + m + i], expected[3 + m + i], row);
    }
    stream.frames.push_back(std::move(f));
  }

  const auto& frames = stream.frames;
  if (frames.size() >= 2) {
    stream.dt_s = frames[1].t_s - frames[0].t_s;
    if (!(stream.dt_s > 0.0)) {
      throw TelemetryParseError("row 3: timestamps are not increasing", 3);
    }
    const double tol = 1e-6 * std::max(1.0, stream.dt_s);
    for (std::size_t k = 1; k < frames.size(); ++k) {
      const double step = frames[k].t_s - frames[k - 1].t_s;
      if (!(step > 0.0)) {
        const long r = static_cast<long>(k) + 2;
        throw TelemetryParseError("row " + std::to_string(r) + ": timestamps are not increasing", r);
      }
      if (std::abs(step - stream.dt_s) > tol) {
        const long r = static_cast<long>(k) + 2;
        throw TelemetryParseError("row " + std::to_string(r) + ": non-uniform sampling interval", r);
      }
    }
  }
  return stream;
}

TelemetryStream read_stream(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_stream(in);
}

}  // namespace ksve
