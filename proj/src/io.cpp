#include "crowd/io.hpp"

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crowd/errors.hpp"

namespace fs = std::filesystem;

namespace crowd {

namespace {

std::string load_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failure on " + path);
  return ss.str();
}

void store_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failure on " + path);
}

[[noreturn]] void format_fail(const std::string& path, std::size_t offset,
                              const std::string& what) {
  throw FormatError(path + " at byte " + std::to_string(offset) + ": " + what);
}

bool space(char c) { return std::isspace(static_cast<unsigned char>(c)); }

// ASCII integer in a PGM header; '#' starts a comment running to end of line.
int parse_pgm_int(const std::string& bytes, std::size_t& pos,
                  const std::string& path) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (space(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t start = pos;
  long v = 0;
  while (pos < bytes.size() &&
         std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    v = v * 10 + (bytes[pos] - '0');
    if (v > 1000000000L) format_fail(path, start, "integer out of range");
    ++pos;
  }
  if (pos == start) format_fail(path, start, "expected an integer");
  return static_cast<int>(v);
}

double parse_double(const std::string& bytes, std::size_t& pos,
                    const std::string& path) {
  const char* start = bytes.c_str() + pos;
  char* end = nullptr;
  double v = std::strtod(start, &end);
  if (end == start) format_fail(path, pos, "expected a number");
  pos += static_cast<std::size_t>(end - start);
  return v;
}

void ensure_parent_dirs(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

}  // namespace

void write_pgm(const std::string& path, const Tensor& image) {
  if (!image.defined() || image.ndim() != 3 || image.dim(0) != 1)
    throw ShapeMismatch("write_pgm: image must be 1xHxW");
  const int h = image.dim(1), w = image.dim(2);
  std::string out =
      "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + image.size());
  for (double v : image.value()) {
    double c = std::clamp(v, 0.0, 1.0);
    out.push_back(static_cast<char>(
        static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  store_bytes(path, out);
}

Tensor read_pgm(const std::string& path) {
  std::string bytes = load_bytes(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    format_fail(path, 0, "not a binary PGM (expected magic P5)");
  std::size_t pos = 2;
  int w = parse_pgm_int(bytes, pos, path);
  int h = parse_pgm_int(bytes, pos, path);
  std::size_t maxval_at = pos;
  int maxval = parse_pgm_int(bytes, pos, path);
  if (w <= 0 || h <= 0) format_fail(path, 2, "bad dimensions");
  if (maxval != 255)
    format_fail(path, maxval_at,
                "maxval must be 255, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !space(bytes[pos]))
    format_fail(path, pos, "expected whitespace before pixel data");
  ++pos;
  std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - pos < need)
    format_fail(path, bytes.size(),
                "truncated pixel data: need " + std::to_string(need) +
                    " bytes, have " + std::to_string(bytes.size() - pos));
  std::vector<double> v(need);
  for (std::size_t i = 0; i < need; ++i)
    v[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  return Tensor::from_data({1, h, w}, std::move(v));
}

void write_points_csv(const std::string& path, const PointList& points) {
  std::string out = "x,y\n";
  char buf[64];
  for (const Point& p : points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.x, p.y);
    out += buf;
  }
  store_bytes(path, out);
}

PointList read_points_csv(const std::string& path) {
  std::string bytes = load_bytes(path);
  if (bytes.compare(0, 4, "x,y\n") != 0)
    format_fail(path, 0, "expected header \"x,y\"");
  std::size_t pos = 4;
  PointList pts;
  while (pos < bytes.size()) {
    std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos)
      format_fail(path, bytes.size(), "missing trailing newline");
    double x = parse_double(bytes, pos, path);
    if (pos >= eol || bytes[pos] != ',')
      format_fail(path, pos, "expected ','");
    ++pos;
    double y = parse_double(bytes, pos, path);
    if (pos != eol) format_fail(path, pos, "unexpected trailing characters");
    pts.push_back({x, y});
    pos = eol + 1;
  }
  return pts;
}

void write_sample(const std::string& stem, const Sample& s) {
  write_pgm(stem + ".pgm", s.image);
  write_points_csv(stem + ".csv", s.points);
}

Sample read_sample(const std::string& stem) {
  Sample s;
  s.image = read_pgm(stem + ".pgm");
  s.points = read_points_csv(stem + ".csv");
  return s;
}

std::string index_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", index);
  return buf;
}

void write_dataset_sample(const std::string& dir, int index, const Sample& s) {
  ensure_parent_dirs(dir + "/images");
  ensure_parent_dirs(dir + "/points");
  write_pgm(dir + "/images/" + index_name(index) + ".pgm", s.image);
  write_points_csv(dir + "/points/" + index_name(index) + ".csv", s.points);
}

Sample read_dataset_sample(const std::string& dir, int index) {
  Sample s;
  s.image = read_pgm(dir + "/images/" + index_name(index) + ".pgm");
  s.points = read_points_csv(dir + "/points/" + index_name(index) + ".csv");
  return s;
}

void write_split(const std::string& dir, const DatasetIndex& index) {
  std::string out;
  for (int i : index.train) out += index_name(i) + " train\n";
  for (int i : index.val) out += index_name(i) + " val\n";
  store_bytes(dir + "/split.txt", out);
}

DatasetIndex read_split(const std::string& dir) {
  const std::string path = dir + "/split.txt";
  std::string bytes = load_bytes(path);
  DatasetIndex idx;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos)
      format_fail(path, bytes.size(), "missing trailing newline");
    std::size_t sp = bytes.find(' ', pos);
    if (sp == std::string::npos || sp >= eol)
      format_fail(path, pos, "expected \"NNNN train|val\"");
    std::size_t ipos = pos;
    long id = 0;
    while (ipos < sp) {
      if (!std::isdigit(static_cast<unsigned char>(bytes[ipos])))
        format_fail(path, ipos, "expected a sample index");
      id = id * 10 + (bytes[ipos] - '0');
      ++ipos;
    }
    std::string tag = bytes.substr(sp + 1, eol - sp - 1);
    if (tag == "train")
      idx.train.push_back(static_cast<int>(id));
    else if (tag == "val")
      idx.val.push_back(static_cast<int>(id));
    else
      format_fail(path, sp + 1, "split tag must be train or val");
    pos = eol + 1;
  }
  return idx;
}

void save_checkpoint(const Model& model, const std::string& prefix) {
  std::string man = "crowd-model 1\n";
  std::string bin;
  std::size_t offset = 0;
  for (const auto& [name, t] : model.params()) {
    man += name + " " + std::to_string(offset);
    for (int i = 0; i < t.ndim(); ++i) man += " " + std::to_string(t.dim(i));
    man += "\n";
    bin.append(reinterpret_cast<const char*>(t.data()),
               t.size() * sizeof(double));
    offset += t.size();
  }
  store_bytes(prefix + ".manifest", man);
  store_bytes(prefix + ".bin", bin);
}

void load_checkpoint(Model& model, const std::string& prefix) {
  const std::string man_path = prefix + ".manifest";
  std::string man = load_bytes(man_path);
  std::size_t pos = 0;
  {
    std::size_t eol = man.find('\n');
    if (eol == std::string::npos || man.substr(0, eol) != "crowd-model 1")
      format_fail(man_path, 0, "expected header \"crowd-model 1\"");
    pos = eol + 1;
  }

  struct Entry {
    std::size_t offset = 0;
    Shape shape;
  };
  std::unordered_map<std::string, Entry> entries;
  while (pos < man.size()) {
    std::size_t eol = man.find('\n', pos);
    if (eol == std::string::npos)
      format_fail(man_path, man.size(), "missing trailing newline");
    std::istringstream line(man.substr(pos, eol - pos));
    std::string name;
    long long off = -1;
    if (!(line >> name >> off) || off < 0)
      format_fail(man_path, pos, "expected \"name offset dims...\"");
    Entry e;
    e.offset = static_cast<std::size_t>(off);
    long long d;
    while (line >> d) {
      if (d <= 0) format_fail(man_path, pos, "dimensions must be positive");
      e.shape.push_back(static_cast<int>(d));
    }
    if (e.shape.empty()) format_fail(man_path, pos, "tensor has no dimensions");
    if (!entries.emplace(name, std::move(e)).second)
      throw ManifestMismatch(man_path + ": duplicate tensor " + name);
    pos = eol + 1;
  }

  if (entries.size() != model.params().size())
    throw ManifestMismatch(man_path + " lists " +
                           std::to_string(entries.size()) +
                           " tensors, the model has " +
                           std::to_string(model.params().size()));
  std::size_t total = 0;
  for (const auto& [name, t] : model.params()) {
    auto it = entries.find(name);
    if (it == entries.end())
      throw ManifestMismatch(man_path + " is missing tensor " + name);
    if (it->second.shape != t.shape())
      throw ManifestMismatch(man_path + ": " + name +
                             " has a different shape than the model expects");
    total += t.size();
  }

  const std::string bin_path = prefix + ".bin";
  std::string bin = load_bytes(bin_path);
  if (bin.size() != total * sizeof(double))
    throw FormatError(bin_path + ": holds " + std::to_string(bin.size()) +
                      " bytes, the manifest describes " +
                      std::to_string(total * sizeof(double)));
  for (const auto& [name, t] : model.params()) {
    const Entry& e = entries.at(name);
    if (e.offset + t.size() > total)
      format_fail(bin_path, e.offset * sizeof(double),
                  "tensor " + name + " runs past the end of the file");
    std::vector<double> vals(t.size());
    std::memcpy(vals.data(), bin.data() + e.offset * sizeof(double),
                t.size() * sizeof(double));
    model.set_param(name, Tensor::from_data(t.shape(), std::move(vals), true));
  }
}

}  // namespace crowd
