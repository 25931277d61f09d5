#include "termadventure/packager.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>
#include <zlib.h>

namespace ta {

namespace {

constexpr std::size_t block_size = 512;
constexpr std::size_t stub_number_width = 12;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PackagerError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool is_safe_relative(std::string_view path) {
  if (path.empty() || path.front() == '/') return false;
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto end = std::min(path.find('/', start), path.size());
    const auto part = path.substr(start, end - start);
    if (part.empty() || part == "." || part == "..") return false;
    start = end + 1;
  }
  return true;
}

// --- ustar -----------------------------------------------------------------

void put_octal(char* field, std::size_t width, std::uint64_t value) {
  // width - 1 digits followed by NUL.
  std::string digits(width - 1, '0');
  for (std::size_t i = width - 1; i-- > 0 && value > 0; value >>= 3) digits[i] = static_cast<char>('0' + (value & 7));
  if (value != 0) throw PackagerError("value too large for tar header");
  std::memcpy(field, digits.data(), width - 1);
  field[width - 1] = '\0';
}

std::uint64_t get_octal(const char* field, std::size_t width) {
  std::uint64_t value = 0;
  std::size_t i = 0;
  while (i < width && field[i] == ' ') ++i;
  for (; i < width && field[i] >= '0' && field[i] <= '7'; ++i) value = value * 8 + static_cast<unsigned>(field[i] - '0');
  return value;
}

std::string get_string(const char* field, std::size_t width) {
  return std::string(field, strnlen(field, width));
}

std::array<char, block_size> make_header(const std::string& path, char type, std::uint64_t size, unsigned mode) {
  std::array<char, block_size> h{};
  std::string name = path;
  std::string prefix;
  if (name.size() > 100) {
    // Split at a slash so that prefix <= 155 and name <= 100.
    auto slash = name.rfind('/', 155);
    while (slash != std::string::npos && name.size() - slash - 1 > 100) slash = std::string::npos;
    if (slash == std::string::npos || slash == 0) throw PackagerError("path too long for ustar: " + path);
    prefix = name.substr(0, slash);
    name = name.substr(slash + 1);
  }
  std::memcpy(h.data(), name.data(), name.size());
  put_octal(h.data() + 100, 8, mode);
  put_octal(h.data() + 108, 8, 0);
  put_octal(h.data() + 116, 8, 0);
  put_octal(h.data() + 124, 12, size);
  put_octal(h.data() + 136, 12, 0);
  h[156] = type;
  std::memcpy(h.data() + 257, "ustar", 6);
  std::memcpy(h.data() + 263, "00", 2);
  std::memcpy(h.data() + 345, prefix.data(), prefix.size());
  std::memset(h.data() + 148, ' ', 8);
  unsigned sum = 0;
  for (const char c : h) sum += static_cast<unsigned char>(c);
  put_octal(h.data() + 148, 7, sum);
  h[155] = ' ';
  return h;
}

// --- stub ------------------------------------------------------------------

std::string sh_quote(std::string_view value) {
  std::string quoted = "'";
  for (const char c : value) {
    if (c == '\'') quoted += "'\\''";
    else quoted += c;
  }
  return quoted + "'";
}

std::string padded(std::uint64_t value) {
  auto text = std::to_string(value);
  text.resize(stub_number_width, ' ');
  return text;
}

std::string make_stub(const BundleManifest& manifest, std::uint64_t offset, std::uint64_t size, std::uint32_t crc) {
  std::ostringstream s;
  s << "#!/bin/sh\n"
       "# Self-extracting TermAdventure bundle.\n"
       "#   --check        verify the payload and exit\n"
       "#   --keep         keep the extracted files\n"
       "#   --target DIR   extract into DIR (implies --keep)\n"
       "#   --noexec       extract only and print the directory\n"
       "# Arguments after -- go to the entrypoint.\n"
       "TA_NAME="
    << sh_quote(manifest.challenge_name) << "\nTA_ENTRY=" << sh_quote(manifest.entrypoint) << "\nTA_OFFSET="
    << padded(offset) << "\nTA_SIZE=" << padded(size) << "\nTA_CRC=" << padded(crc) << "\n";
  s << R"SH(
keep=0
noexec=0
check=0
target=
while [ $# -gt 0 ]; do
  case $1 in
    --keep) keep=1 ;;
    --noexec) noexec=1; keep=1 ;;
    --check) check=1 ;;
    --target)
      if [ $# -lt 2 ]; then echo "$0: --target needs a directory" >&2; exit 2; fi
      target=$2; keep=1; shift ;;
    --) shift; break ;;
    *) break ;;
  esac
  shift
done

sum=$(tail -c +"$TA_OFFSET" "$0" | cksum) || exit 1
crc=${sum%% *}
size=${sum#* }
size=${size%% *}
if [ "$crc" != "$TA_CRC" ] || [ "$size" != "$TA_SIZE" ]; then
  echo "$0: payload checksum mismatch, the bundle is damaged" >&2
  exit 1
fi
if [ $check -eq 1 ]; then
  echo "$TA_NAME: payload OK"
  exit 0
fi

if [ -n "$target" ]; then
  mkdir -p "$target" || exit 1
  dir=$target
else
  dir=${TMPDIR:-/tmp}/ta-bundle.$$
  mkdir -m 700 "$dir" || exit 1
fi
if [ $keep -eq 0 ]; then
  trap 'rm -rf "$dir"' EXIT
  trap 'exit 129' HUP
  trap 'exit 130' INT
  trap 'exit 143' TERM
fi

if ! tail -c +"$TA_OFFSET" "$0" | gzip -dc | (cd "$dir" && tar -xf -); then
  echo "$0: extraction failed" >&2
  exit 1
fi
if [ $noexec -eq 1 ]; then
  echo "$dir"
  exit 0
fi
cd "$dir" || exit 1
"./$TA_ENTRY" "$@"
exit $?
)SH";
  s << payload_marker << "\n";
  return s.str();
}

struct StubFields {
  std::string name;
  std::string entry;
  std::uint64_t offset = 0;
  std::uint64_t size = 0;
  std::uint32_t crc = 0;
};

std::string unquote(std::string_view value) {
  std::string out;
  bool quoted = false;
  for (std::size_t i = 0; i < value.size(); ++i) {
    const char c = value[i];
    if (c == '\'') {
      quoted = !quoted;
    } else if (!quoted && c == '\\' && i + 1 < value.size()) {
      out += value[++i];
    } else {
      out += c;
    }
  }
  return out;
}

StubFields parse_stub(std::string_view archive) {
  const auto marker = "\n" + std::string(payload_marker) + "\n";
  const auto marker_at = archive.find(marker);
  if (marker_at == std::string_view::npos) throw PackagerError("not a bundle: payload marker missing");
  const auto stub = archive.substr(0, marker_at);

  StubFields fields;
  std::optional<std::uint64_t> offset, size, crc;
  std::size_t start = 0;
  while (start < stub.size()) {
    auto end = stub.find('\n', start);
    if (end == std::string_view::npos) end = stub.size();
    const auto line = stub.substr(start, end - start);
    start = end + 1;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) continue;
    const auto key = line.substr(0, eq);
    const auto value = line.substr(eq + 1);
    auto number = [&](std::string_view text) -> std::uint64_t {
      std::uint64_t v = 0;
      std::size_t i = 0;
      for (; i < text.size() && text[i] >= '0' && text[i] <= '9'; ++i) v = v * 10 + static_cast<unsigned>(text[i] - '0');
      if (i == 0) throw PackagerError("malformed bundle header");
      return v;
    };
    if (key == "TA_NAME") fields.name = unquote(value);
    else if (key == "TA_ENTRY") fields.entry = unquote(value);
    else if (key == "TA_OFFSET") offset = number(value);
    else if (key == "TA_SIZE") size = number(value);
    else if (key == "TA_CRC") crc = number(value);
  }
  if (!offset || !size || !crc) throw PackagerError("malformed bundle header");
  fields.offset = *offset;
  fields.size = *size;
  fields.crc = static_cast<std::uint32_t>(*crc);
  if (fields.offset != marker_at + marker.size() + 1) throw PackagerError("bundle header offset does not match the stub");
  return fields;
}

std::uint32_t cksum_string(std::string_view data) {
  return posix_cksum({reinterpret_cast<const std::uint8_t*>(data.data()), data.size()});
}

}  // namespace

void BundleManifest::validate() const {
  if (entries.empty()) throw PackagerError("manifest has no entries");
  std::set<std::string> seen;
  for (const auto& entry : entries) {
    if (!is_safe_relative(entry.path)) throw PackagerError("unsafe archive path: '" + entry.path + "'");
    if (!seen.insert(entry.path).second) throw PackagerError("duplicate archive path: " + entry.path);
  }
  for (const auto& path : seen) {
    // A file cannot also be a directory of another entry.
    for (const auto& other : seen) {
      if (other.size() > path.size() && other.compare(0, path.size(), path) == 0 && other[path.size()] == '/') {
        throw PackagerError("archive path is both a file and a directory: " + path);
      }
    }
  }
  if (!seen.count(entrypoint)) throw PackagerError("entrypoint '" + entrypoint + "' is not among the entries");
}

BundleManifest parse_manifest(std::string_view yaml, const std::filesystem::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml));
  } catch (const YAML::Exception& e) {
    throw PackagerError(std::string("manifest: ") + e.what());
  }
  if (!root.IsMap()) throw PackagerError("manifest must be a mapping");
  BundleManifest manifest;
  try {
    manifest.challenge_name = root["challenge_name"] ? root["challenge_name"].as<std::string>() : "";
    if (!root["entrypoint"]) throw PackagerError("manifest: missing entrypoint");
    manifest.entrypoint = root["entrypoint"].as<std::string>();
    const auto entries = root["entries"];
    if (!entries || !entries.IsSequence()) throw PackagerError("manifest: entries must be a list");
    for (const auto& node : entries) {
      if (!node.IsMap() || !node["path"] || !node["source"]) throw PackagerError("manifest: each entry needs path and source");
      BundleEntry entry;
      entry.path = node["path"].as<std::string>();
      entry.source = node["source"].as<std::string>();
      if (entry.source.is_relative()) entry.source = base_dir / entry.source;
      entry.executable = node["executable"] ? node["executable"].as<bool>() : false;
      manifest.entries.push_back(std::move(entry));
    }
  } catch (const YAML::Exception& e) {
    throw PackagerError(std::string("manifest: ") + e.what());
  }
  manifest.validate();
  return manifest;
}

BundleManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file(path), std::filesystem::absolute(path).parent_path());
}

std::uint32_t posix_cksum(std::span<const std::uint8_t> data) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i << 24;
      for (int k = 0; k < 8; ++k) c = (c & 0x80000000U) ? (c << 1) ^ 0x04C11DB7U : c << 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0;
  auto feed = [&](std::uint8_t byte) { crc = (crc << 8) ^ table[((crc >> 24) ^ byte) & 0xffU]; };
  for (const auto byte : data) feed(byte);
  for (std::uint64_t n = data.size(); n != 0; n >>= 8) feed(static_cast<std::uint8_t>(n & 0xffU));
  return ~crc;
}

std::string write_tar(const std::vector<ArchiveMember>& members) {
  std::string out;
  std::set<std::string> directories;
  auto append_block = [&](const std::array<char, block_size>& block) { out.append(block.data(), block.size()); };
  for (const auto& member : members) {
    if (!is_safe_relative(member.path)) throw PackagerError("unsafe archive path: '" + member.path + "'");
    for (auto slash = member.path.find('/'); slash != std::string::npos; slash = member.path.find('/', slash + 1)) {
      const auto dir = member.path.substr(0, slash) + "/";
      if (directories.insert(dir).second) append_block(make_header(dir, '5', 0, 0755));
    }
    append_block(make_header(member.path, '0', member.data.size(), member.executable ? 0755 : 0644));
    out += member.data;
    out.append((block_size - member.data.size() % block_size) % block_size, '\0');
  }
  out.append(2 * block_size, '\0');
  return out;
}

std::vector<ArchiveMember> read_tar(std::string_view tar) {
  std::vector<ArchiveMember> members;
  std::size_t pos = 0;
  while (true) {
    if (pos + block_size > tar.size()) throw PackagerError("tar payload is truncated");
    const char* h = tar.data() + pos;
    if (std::all_of(h, h + block_size, [](char c) { return c == '\0'; })) break;

    unsigned sum = 0;
    for (std::size_t i = 0; i < block_size; ++i) sum += (i >= 148 && i < 156) ? ' ' : static_cast<unsigned char>(h[i]);
    if (sum != get_octal(h + 148, 8)) throw PackagerError("tar header checksum mismatch");

    std::string path = get_string(h, 100);
    if (const auto prefix = get_string(h + 345, 155); !prefix.empty()) path = prefix + "/" + path;
    const auto size = get_octal(h + 124, 12);
    const char type = h[156];
    const auto mode = get_octal(h + 100, 8);
    pos += block_size;
    const auto padded_size = (size + block_size - 1) / block_size * block_size;
    if (pos + padded_size > tar.size()) throw PackagerError("tar payload is truncated");

    if (type == '5') {
      while (!path.empty() && path.back() == '/') path.pop_back();
      if (!is_safe_relative(path)) throw PackagerError("unsafe path in archive: '" + path + "'");
    } else if (type == '0' || type == '\0') {
      if (!is_safe_relative(path)) throw PackagerError("unsafe path in archive: '" + path + "'");
      members.push_back({path, std::string(tar.substr(pos, size)), (mode & 0100) != 0});
    } else {
      throw PackagerError("unsupported tar entry type for " + path);
    }
    pos += padded_size;
  }
  return members;
}

std::string gzip_compress(std::string_view data) {
  z_stream z{};
  if (deflateInit2(&z, Z_BEST_COMPRESSION, Z_DEFLATED, 15 + 16, 9, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw PackagerError("deflateInit failed");
  }
  std::string out(deflateBound(&z, static_cast<uLong>(data.size())), '\0');
  z.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
  z.avail_in = static_cast<uInt>(data.size());
  z.next_out = reinterpret_cast<Bytef*>(out.data());
  z.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&z, Z_FINISH);
  deflateEnd(&z);
  if (rc != Z_STREAM_END) throw PackagerError("gzip compression failed");
  out.resize(z.total_out);
  return out;
}

std::string gzip_decompress(std::string_view data) {
  z_stream z{};
  if (inflateInit2(&z, 15 + 16) != Z_OK) throw PackagerError("inflateInit failed");
  z.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
  z.avail_in = static_cast<uInt>(data.size());
  std::string out;
  std::array<char, 64 * 1024> buffer{};
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    z.next_out = reinterpret_cast<Bytef*>(buffer.data());
    z.avail_out = static_cast<uInt>(buffer.size());
    rc = inflate(&z, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&z);
      throw PackagerError("payload is not valid gzip data");
    }
    out.append(buffer.data(), buffer.size() - z.avail_out);
    if (rc == Z_OK && z.avail_in == 0 && z.avail_out != 0) {
      inflateEnd(&z);
      throw PackagerError("gzip payload is truncated");
    }
  }
  inflateEnd(&z);
  return out;
}

void build_archive(const BundleManifest& manifest, const std::filesystem::path& output) {
  manifest.validate();
  std::vector<ArchiveMember> members;
  for (const auto& entry : manifest.entries) {
    if (!std::filesystem::is_regular_file(entry.source)) {
      throw PackagerError("missing source file for " + entry.path + ": " + entry.source.string());
    }
    members.push_back({entry.path, read_file(entry.source), entry.executable});
  }
  const std::string payload = gzip_compress(write_tar(members));
  const std::uint32_t crc = cksum_string(payload);

  // Field widths are fixed, so the stub length does not depend on the offset.
  const std::size_t stub_size = make_stub(manifest, 0, payload.size(), crc).size();
  const std::string stub = make_stub(manifest, stub_size + 1, payload.size(), crc);
  if (stub.size() != stub_size) throw PackagerError("internal error: stub size changed");

  auto temp = output;
  temp += ".partial";
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw PackagerError("cannot write " + output.string());
    out << stub << payload;
    if (!out) throw PackagerError("cannot write " + output.string());
  }
  std::filesystem::permissions(temp, std::filesystem::perms::owner_all | std::filesystem::perms::group_read |
                                         std::filesystem::perms::group_exec | std::filesystem::perms::others_read |
                                         std::filesystem::perms::others_exec);
  std::filesystem::rename(temp, output);
}

namespace {

std::pair<ArchiveSummary, std::vector<ArchiveMember>> open_archive(const std::filesystem::path& archive) {
  const std::string data = read_file(archive);
  const StubFields fields = parse_stub(data);
  const std::string_view payload = std::string_view(data).substr(fields.offset - 1);
  if (payload.size() < fields.size) throw PackagerError("bundle is truncated");
  if (payload.size() > fields.size) throw PackagerError("bundle has trailing data after the payload");
  if (cksum_string(payload) != fields.crc) throw PackagerError("payload checksum mismatch");

  ArchiveSummary summary;
  summary.challenge_name = fields.name;
  summary.entrypoint = fields.entry;
  summary.crc = fields.crc;
  summary.payload_size = fields.size;
  auto members = read_tar(gzip_decompress(payload));
  for (const auto& member : members) summary.items.push_back({member.path, member.data.size(), member.executable});
  return {std::move(summary), std::move(members)};
}

}  // namespace

ArchiveSummary verify_archive(const std::filesystem::path& archive) { return open_archive(archive).first; }

ArchiveSummary extract_archive(const std::filesystem::path& archive, const std::filesystem::path& destination) {
  auto [summary, members] = open_archive(archive);
  for (const auto& member : members) {
    const auto target = destination / member.path;
    std::filesystem::create_directories(target.parent_path());
    {
      std::ofstream out(target, std::ios::binary | std::ios::trunc);
      out << member.data;
      if (!out) throw PackagerError("cannot write " + target.string());
    }
    using std::filesystem::perms;
    auto mode = perms::owner_read | perms::owner_write | perms::group_read | perms::others_read;
    if (member.executable) mode |= perms::owner_exec | perms::group_exec | perms::others_exec;
    std::filesystem::permissions(target, mode);
  }
  return summary;
}

}  // namespace ta
