#pragma once

// WAV and CSV exchange formats.
//   WAV: RIFF/WAVE, PCM, 16-bit little-endian, one channel per file.
//   CSV: header row, one sample per line, doubles printed with "%.17g".

#include "velobss/core.hpp"
#include "velobss/trajectory.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace velobss {

struct WavChannel {
  double sample_rate = 0.0;
  std::vector<std::int16_t> samples;
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

inline WavChannel parse_wav(std::string_view bytes, const std::string& name = "<memory>") {
  auto fail = [&](const std::string& why) { return FormatError(name + ": " + why); };
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || bytes.substr(0, 4) != "RIFF" || bytes.substr(8, 4) != "WAVE")
    throw fail("not a RIFF/WAVE file");

  bool have_fmt = false;
  WavChannel out;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string_view id = bytes.substr(pos, 4);
    const std::uint32_t size = detail::read_u32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw fail("truncated chunk '" + std::string(id) + "'");
    if (id == "fmt ") {
      if (size < 16) throw fail("short fmt chunk");
      const std::uint16_t format = detail::read_u16(p + body);
      const std::uint16_t channels = detail::read_u16(p + body + 2);
      const std::uint32_t rate = detail::read_u32(p + body + 4);
      const std::uint16_t bits = detail::read_u16(p + body + 14);
      if (format != 1) throw fail("unsupported encoding (only integer PCM)");
      if (bits != 16) throw fail("unsupported bit depth " + std::to_string(bits) + " (only 16-bit)");
      if (channels != 1) throw fail("expected mono, found " + std::to_string(channels) + " channels");
      if (rate == 0) throw fail("zero sample rate");
      out.sample_rate = rate;
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      const std::size_t frames = size / 2;
      out.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i)
        out.samples[i] = static_cast<std::int16_t>(detail::read_u16(p + body + 2 * i));
      return out;
    }
    pos = body + size + (size & 1u);
  }
  throw fail(have_fmt ? "missing data chunk" : "missing fmt chunk");
}

inline WavChannel read_wav(const std::filesystem::path& path) {
  return parse_wav(detail::slurp(path), path.string());
}

/// Loads one mono file per channel and stacks them column-wise.
inline SignalSeries load_wav(std::span<const std::filesystem::path> paths) {
  if (paths.empty()) throw DomainError("load_wav: no files given");
  std::vector<WavChannel> chans;
  for (const auto& p : paths) chans.push_back(read_wav(p));
  const std::size_t frames = chans.front().samples.size();
  for (std::size_t c = 1; c < chans.size(); ++c) {
    if (chans[c].samples.size() != frames)
      throw ShapeError("load_wav: channel length mismatch (" + paths[c].string() + ")");
    if (chans[c].sample_rate != chans.front().sample_rate)
      throw ShapeError("load_wav: sample rate mismatch (" + paths[c].string() + ")");
  }
  Matrix data(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(chans.size()));
  for (std::size_t c = 0; c < chans.size(); ++c)
    for (std::size_t i = 0; i < frames; ++i)
      data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = chans[c].samples[i];
  return SignalSeries(chans.front().sample_rate, std::move(data));
}

inline SignalSeries load_wav(const std::filesystem::path& path) {
  return load_wav(std::span<const std::filesystem::path>(&path, 1));
}

inline std::string encode_wav(const WavChannel& ch) {
  const auto data_bytes = static_cast<std::uint32_t>(ch.samples.size() * 2);
  const auto rate = static_cast<std::uint32_t>(std::lround(ch.sample_rate));
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  detail::put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, rate);
  detail::put_u32(out, rate * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, data_bytes);
  for (std::int16_t s : ch.samples) detail::put_u16(out, static_cast<std::uint16_t>(s));
  return out;
}

inline void write_wav(const std::filesystem::path& path, const WavChannel& ch) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  const std::string bytes = encode_wav(ch);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

/// Rounds and clips one column to the 16-bit range; returns the number of clipped samples.
inline std::size_t quantize_channel(const Matrix& data, Eigen::Index column, WavChannel& out) {
  std::size_t clipped = 0;
  out.samples.resize(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    double v = std::round(data(i, column));
    if (v > 32767.0 || v < -32768.0) {
      ++clipped;
      v = std::clamp(v, -32768.0, 32767.0);
    }
    out.samples[static_cast<std::size_t>(i)] = static_cast<std::int16_t>(v);
  }
  return clipped;
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;
  Matrix values;

  Eigen::Index column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<Eigen::Index>(i);
    return -1;
  }
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t a = 0;
    while (a < cell.size() && cell[a] == ' ') ++a;
    out.push_back(cell.substr(a));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

/// Parses a numeric CSV with a header row. Errors carry the 1-based line number.
inline CsvTable parse_csv(std::istream& in, const std::string& name = "<stream>") {
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) break;
  }
  if (line.empty()) throw FormatError(name + ": empty CSV");
  t.header = detail::split_csv_line(line);
  const std::size_t cols = t.header.size();

  std::vector<double> flat;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != cols)
      throw FormatError(name + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols) +
                        " fields, found " + std::to_string(cells.size()));
    for (const auto& c : cells) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (c.empty() || end != c.c_str() + c.size())
        throw FormatError(name + ":" + std::to_string(lineno) + ": not a number: '" + c + "'");
      flat.push_back(v);
    }
    ++rows;
  }
  t.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      t.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = flat[r * cols + c];
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_csv(in, path.string());
}

/// Row-oriented CSV writer. Cells are appended with << and the row closed with end_row().
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
      : path_(path), os_(path) {
    if (!os_) throw IoError("cannot write " + path.string());
    for (std::size_t i = 0; i < header.size(); ++i) os_ << (i ? "," : "") << header[i];
    os_ << '\n';
  }

  CsvWriter& operator<<(double v) { return cell(format_double(v)); }
  CsvWriter& operator<<(int v) { return cell(std::to_string(v)); }
  CsvWriter& operator<<(long v) { return cell(std::to_string(v)); }
  CsvWriter& operator<<(long long v) { return cell(std::to_string(v)); }
  CsvWriter& operator<<(std::size_t v) { return cell(std::to_string(v)); }
  CsvWriter& operator<<(const std::string& v) { return cell(v); }
  CsvWriter& operator<<(const char* v) { return cell(v); }

  void end_row() {
    os_ << '\n';
    first_ = true;
  }

  void close() {
    os_.close();
    if (!os_) throw IoError("write failed: " + path_.string());
  }

 private:
  CsvWriter& cell(const std::string& s) {
    if (!first_) os_ << ',';
    os_ << s;
    first_ = false;
    return *this;
  }

  std::filesystem::path path_;
  std::ofstream os_;
  bool first_ = true;
};

inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const Matrix& values) {
  if (static_cast<Eigen::Index>(header.size()) != values.cols())
    throw ShapeError("write_csv: header/column count mismatch");
  CsvWriter w(path, header);
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) w << values(r, c);
    w.end_row();
  }
  w.close();
}

/// Reads a series CSV. A leading "t" column (seconds) fixes the sample rate;
/// otherwise fallback_rate is used. An "index" column, if present, is ignored.
inline SignalSeries read_series_csv(const std::filesystem::path& path, double fallback_rate) {
  CsvTable t = read_csv(path);
  std::vector<Eigen::Index> keep;
  const Eigen::Index tcol = t.column("t");
  const Eigen::Index icol = t.column("index");
  for (Eigen::Index c = 0; c < t.values.cols(); ++c)
    if (c != tcol && c != icol) keep.push_back(c);
  if (keep.empty()) throw FormatError(path.string() + ": no data columns");
  double rate = fallback_rate;
  if (tcol >= 0 && t.values.rows() >= 2) {
    const double dt = (t.values(t.values.rows() - 1, tcol) - t.values(0, tcol)) /
                      static_cast<double>(t.values.rows() - 1);
    if (!(dt > 0)) throw FormatError(path.string() + ": time column not increasing");
    rate = 1.0 / dt;
  }
  if (t.values.rows() < 3)
    throw InsufficientDataError(path.string() + ": fewer than 3 samples");
  Matrix data(t.values.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) data.col(static_cast<Eigen::Index>(j)) = t.values.col(keep[j]);
  return SignalSeries(rate, std::move(data));
}

/// FNV-1a 64-bit digest, hex encoded; used in run manifests.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string file_digest(const std::filesystem::path& path) {
  return fnv1a_hex(detail::slurp(path));
}

}  // namespace velobss
