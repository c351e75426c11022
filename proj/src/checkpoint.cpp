#include "props/checkpoint.hpp"

#include <bit>
#include <cinttypes>
#include <cstring>
#include <fstream>
#include <sstream>

namespace props {

namespace {

constexpr const char* kMagic = "props-checkpoint 1";

static_assert(std::endian::native == std::endian::little, "payload layout assumes a little-endian host");

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
  return buf;
}

bool has_space(const std::string& s) { return s.find_first_of(" \t\n") != std::string::npos; }

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ostringstream manifest;
  manifest << kMagic << '\n';
  for (const auto& [k, v] : checkpoint.meta) {
    if (has_space(k) || v.find('\n') != std::string::npos) throw ConfigError("bad checkpoint meta key '" + k + "'");
    manifest << "meta " << k << ' ' << v << '\n';
  }
  std::size_t offset = 0;
  for (const auto& [section, values] : checkpoint.sections) {
    if (has_space(section)) throw ConfigError("bad checkpoint section name '" + section + "'");
    manifest << "section " << section << ' ' << values.size() << ' ' << hex(fingerprint(values)) << '\n';
    for (const auto& [name, m] : values) {
      if (has_space(name)) throw ConfigError("bad parameter name '" + name + "'");
      manifest << "param " << name << ' ' << m.rows() << ' ' << m.cols() << ' ' << offset << '\n';
      offset += static_cast<std::size_t>(m.size());
    }
  }
  manifest << "payload " << offset << '\n';

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IntegrityError("manifest: cannot open " + path + " for writing");
  out << manifest.str();
  for (const auto& [section, values] : checkpoint.sections) {
    for (const auto& [name, m] : values) {
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
  }
  if (!out) throw IntegrityError("payload: write to " + path + " failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("manifest: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw IntegrityError("manifest: " + path + " is not a checkpoint");

  struct Entry {
    std::string section;
    std::string name;
    Index rows;
    Index cols;
    std::size_t offset;
  };
  Checkpoint ck;
  std::vector<Entry> entries;
  std::map<std::string, std::string> expected;
  std::string current;
  std::size_t payload = 0;
  bool done = false;
  while (!done && std::getline(in, line)) {
    std::istringstream row(line);
    std::string kind;
    row >> kind;
    if (kind == "meta") {
      std::string key;
      row >> key;
      std::string value;
      std::getline(row >> std::ws, value);
      ck.meta[key] = value;
    } else if (kind == "section") {
      std::size_t count = 0;
      std::string fp;
      row >> current >> count >> fp;
      expected[current] = fp;
      ck.sections[current];
    } else if (kind == "param") {
      Entry e{current, "", 0, 0, 0};
      row >> e.name >> e.rows >> e.cols >> e.offset;
      if (!row || current.empty()) throw IntegrityError("manifest: malformed line '" + line + "'");
      entries.push_back(e);
    } else if (kind == "payload") {
      row >> payload;
      done = true;
    } else {
      throw IntegrityError("manifest: unexpected line '" + line + "'");
    }
  }
  if (!done) throw IntegrityError("manifest: missing payload line");

  std::vector<double> data(payload);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(payload * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(payload * sizeof(double))) {
    throw IntegrityError("payload: truncated");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IntegrityError("payload: trailing bytes");

  for (const auto& e : entries) {
    const std::size_t n = static_cast<std::size_t>(e.rows * e.cols);
    if (e.offset + n > payload) throw IntegrityError(e.section + ": parameter " + e.name + " overruns the payload");
    Matrix m(e.rows, e.cols);
    std::memcpy(m.data(), data.data() + e.offset, n * sizeof(double));
    ck.sections[e.section].emplace(e.name, std::move(m));
  }
  for (const auto& [section, values] : ck.sections) {
    if (hex(fingerprint(values)) != expected[section]) {
      throw IntegrityError(section + ": fingerprint mismatch");
    }
  }
  return ck;
}

}  // namespace props
