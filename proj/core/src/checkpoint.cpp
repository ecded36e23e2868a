#include "vtpt/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

namespace vtpt {

namespace {

void fail(const std::string& path, const std::string& why) {
  throw std::runtime_error("checkpoint " + path + ": " + why);
}

void check_token(const std::string& s, const std::string& path, const char* what) {
  if (s.find_first_of(" \t\n=") != std::string::npos)
    fail(path, std::string(what) + " contains whitespace: '" + s + "'");
}

}  // namespace

int64_t Checkpoint::meta_int(const std::string& key, int64_t fallback) const {
  auto it = meta.find(key);
  if (it == meta.end()) return fallback;
  return std::stoll(it->second);
}

void Checkpoint::save(const std::string& path) const {
  std::ostringstream header;
  for (const auto& [k, v] : config) header << "config " << k << "=" << v << "\n";
  for (const auto& [k, v] : meta) {
    check_token(k, path, "meta key");
    header << "meta " << k << "=" << v << "\n";
  }
  int64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    check_token(name, path, "tensor name");
    header << "tensor " << name << " ";
    const Shape& s = t.shape();
    for (size_t i = 0; i < s.size(); ++i) header << (i ? "x" : "") << s[i];
    header << " " << offset << " " << t.numel() << "\n";
    offset += t.numel() * static_cast<int64_t>(sizeof(float));
  }
  header << "end\n";
  std::string header_text = header.str();

  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(tmp, "cannot open for writing");
    out.write("VTPT", 4);
    uint32_t version = kVersion;
    uint64_t header_bytes = header_text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&header_bytes), sizeof(header_bytes));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, t] : tensors)
      out.write(reinterpret_cast<const char*>(t.data()),
                t.numel() * static_cast<std::streamsize>(sizeof(float)));
    if (!out) fail(tmp, "write failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) fail(path, "rename failed");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "VTPT", 4) != 0) fail(path, "bad magic (not a VTPT file)");
  uint32_t version = 0;
  uint64_t header_bytes = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_bytes), sizeof(header_bytes));
  if (!in) fail(path, "truncated header");
  if (version != kVersion)
    fail(path, "unsupported version " + std::to_string(version) + " (this build reads " +
                   std::to_string(kVersion) + ")");
  std::string header_text(header_bytes, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_bytes));
  if (!in) fail(path, "truncated header text");

  Checkpoint ckpt;
  struct Entry {
    std::string name;
    Shape shape;
    int64_t offset;
    int64_t count;
  };
  std::vector<Entry> entries;
  std::istringstream hs(header_text);
  std::string line;
  bool saw_end = false;
  while (std::getline(hs, line)) {
    if (line == "end") {
      saw_end = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config" || kind == "meta") {
      std::string rest;
      std::getline(ls, rest);
      if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
      size_t eq = rest.find('=');
      if (eq == std::string::npos) fail(path, "malformed " + kind + " line: " + line);
      auto& dst = kind == "config" ? ckpt.config : ckpt.meta;
      dst[rest.substr(0, eq)] = rest.substr(eq + 1);
    } else if (kind == "tensor") {
      Entry e;
      std::string shape_text;
      if (!(ls >> e.name >> shape_text >> e.offset >> e.count))
        fail(path, "malformed tensor line: " + line);
      std::istringstream sh(shape_text);
      std::string ext;
      while (std::getline(sh, ext, 'x')) e.shape.push_back(std::stoi(ext));
      if (shape_numel(e.shape) != e.count)
        fail(path, "tensor " + e.name + ": shape does not match count");
      entries.push_back(std::move(e));
    } else {
      fail(path, "unknown header line: " + line);
    }
  }
  if (!saw_end) fail(path, "header missing end marker");

  int64_t expected_offset = 0;
  for (const auto& e : entries) {
    if (e.offset != expected_offset)
      fail(path, "tensor " + e.name + ": offsets must be adjacent and ascending");
    expected_offset += e.count * static_cast<int64_t>(sizeof(float));
  }

  std::streampos payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  int64_t payload_size = static_cast<int64_t>(in.tellg() - payload_start);
  if (payload_size != expected_offset)
    fail(path, "payload size " + std::to_string(payload_size) + " does not match manifest (" +
                   std::to_string(expected_offset) + ")");
  in.seekg(payload_start);

  for (const auto& e : entries) {
    Tensor<float> t = Tensor<float>::zeros(e.shape);
    in.read(reinterpret_cast<char*>(t.data()),
            e.count * static_cast<std::streamsize>(sizeof(float)));
    if (!in) fail(path, "truncated payload at tensor " + e.name);
    ckpt.tensors.add(e.name, std::move(t));
  }
  return ckpt;
}

}  // namespace vtpt
