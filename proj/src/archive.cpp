#include "salm2/archive.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "salm2/errors.hpp"

namespace salm2 {

namespace {

constexpr size_t kBlock = 512;

void set_octal(char* field, size_t len, uint64_t value) {
  // len-1 octal digits, NUL terminated.
  std::snprintf(field, len, "%0*llo", static_cast<int>(len - 1),
                static_cast<unsigned long long>(value));
}

std::string make_header(const std::string& name, uint64_t size) {
  if (name.size() >= 100) throw CheckpointError("archive member name too long: " + name);
  std::string h(kBlock, '\0');
  std::memcpy(h.data(), name.data(), name.size());
  set_octal(h.data() + 100, 8, 0644);   // mode
  set_octal(h.data() + 108, 8, 0);      // uid
  set_octal(h.data() + 116, 8, 0);      // gid
  set_octal(h.data() + 124, 12, size);  // size
  set_octal(h.data() + 136, 12, 0);     // mtime: fixed for reproducible bytes
  std::memset(h.data() + 148, ' ', 8);  // checksum placeholder
  h[156] = '0';                         // regular file
  std::memcpy(h.data() + 257, "ustar", 6);
  h[263] = '0';
  h[264] = '0';
  unsigned sum = 0;
  for (unsigned char c : h) sum += c;
  std::snprintf(h.data() + 148, 7, "%06o", sum);
  h[154] = '\0';
  h[155] = ' ';
  return h;
}

uint64_t parse_octal(const char* field, size_t len) {
  uint64_t v = 0;
  for (size_t i = 0; i < len && field[i]; ++i) {
    char c = field[i];
    if (c == ' ') continue;
    if (c < '0' || c > '7') throw CheckpointError("malformed octal field in archive header");
    v = v * 8 + static_cast<uint64_t>(c - '0');
  }
  return v;
}

}  // namespace

void atomic_write_file(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

void write_archive(const std::string& path, const std::vector<ArchiveMember>& members) {
  std::string buf;
  for (const auto& m : members) {
    buf += make_header(m.name, m.bytes.size());
    buf += m.bytes;
    if (m.bytes.size() % kBlock) buf.append(kBlock - m.bytes.size() % kBlock, '\0');
  }
  buf.append(2 * kBlock, '\0');
  atomic_write_file(path, buf);
}

std::map<std::string, std::string> read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open archive: " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::map<std::string, std::string> members;
  size_t off = 0;
  while (off + kBlock <= data.size()) {
    const char* h = data.data() + off;
    bool all_zero = true;
    for (size_t i = 0; i < kBlock; ++i)
      if (h[i]) { all_zero = false; break; }
    if (all_zero) return members;
    if (std::memcmp(h + 257, "ustar", 5) != 0)
      throw CheckpointError("not a recognized archive: " + path);
    unsigned stored = static_cast<unsigned>(parse_octal(h + 148, 8));
    unsigned sum = 0;
    for (size_t i = 0; i < kBlock; ++i) sum += (i >= 148 && i < 156) ? ' ' : static_cast<unsigned char>(h[i]);
    if (sum != stored) throw CheckpointError("archive header checksum mismatch in " + path);
    std::string name(h, strnlen(h, 100));
    uint64_t size = parse_octal(h + 124, 12);
    off += kBlock;
    if (off + size > data.size())
      throw CheckpointError("archive truncated: " + path + " (member " + name + ")");
    members[name] = data.substr(off, size);
    off += size;
    if (size % kBlock) off += kBlock - size % kBlock;
  }
  throw CheckpointError("archive truncated: " + path + " (missing end blocks)");
}

std::string floats_to_le_bytes(const std::vector<float>& v) {
  std::string out(v.size() * 4, '\0');
  for (size_t i = 0; i < v.size(); ++i) {
    uint32_t bits;
    std::memcpy(&bits, &v[i], 4);
    out[4 * i] = static_cast<char>(bits & 0xff);
    out[4 * i + 1] = static_cast<char>((bits >> 8) & 0xff);
    out[4 * i + 2] = static_cast<char>((bits >> 16) & 0xff);
    out[4 * i + 3] = static_cast<char>((bits >> 24) & 0xff);
  }
  return out;
}

std::vector<float> le_bytes_to_floats(const std::string& bytes) {
  if (bytes.size() % 4) throw CheckpointError("weight blob length is not a multiple of 4");
  std::vector<float> v(bytes.size() / 4);
  for (size_t i = 0; i < v.size(); ++i) {
    uint32_t bits = static_cast<uint8_t>(bytes[4 * i]) |
                    (static_cast<uint32_t>(static_cast<uint8_t>(bytes[4 * i + 1])) << 8) |
                    (static_cast<uint32_t>(static_cast<uint8_t>(bytes[4 * i + 2])) << 16) |
                    (static_cast<uint32_t>(static_cast<uint8_t>(bytes[4 * i + 3])) << 24);
    std::memcpy(&v[i], &bits, 4);
  }
  return v;
}

}  // namespace salm2
