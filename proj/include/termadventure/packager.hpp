#pragma once

// Self-extracting bundles.
//
// Layout: a POSIX sh stub, a marker line, then a gzip-compressed ustar
// payload. The stub carries the payload's offset, size and POSIX cksum CRC
// in fixed-width variables and refuses to run anything if they do not match.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ta {

class PackagerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BundleEntry {
  std::string path;  ///< relative path inside the archive
  std::filesystem::path source;
  bool executable = false;

  friend bool operator==(const BundleEntry&, const BundleEntry&) = default;
};

struct BundleManifest {
  std::string challenge_name;
  std::string entrypoint;  ///< one of the entry paths; run after extraction
  std::vector<BundleEntry> entries;

  /// Throws PackagerError unless paths are relative without `..`, unique,
  /// and the entrypoint is among them. Does not look at the sources.
  void validate() const;
};

/// YAML with keys challenge_name, entrypoint and entries (a list of
/// {path, source, executable}). Relative sources are resolved against
/// `base_dir`.
BundleManifest parse_manifest(std::string_view yaml, const std::filesystem::path& base_dir);
BundleManifest load_manifest(const std::filesystem::path& path);

/// The CRC printed by POSIX `cksum` for `data`.
std::uint32_t posix_cksum(std::span<const std::uint8_t> data);

struct ArchiveMember {
  std::string path;
  std::string data;
  bool executable = false;
};

/// ustar serialisation. Parent directories are emitted as directory entries.
std::string write_tar(const std::vector<ArchiveMember>& members);
/// Regular files only (directory entries are skipped). Rejects absolute
/// paths, `..` components, bad header checksums and unsupported types.
std::vector<ArchiveMember> read_tar(std::string_view tar);

std::string gzip_compress(std::string_view data);
std::string gzip_decompress(std::string_view data);

inline constexpr std::string_view payload_marker = "__TA_PAYLOAD_BELOW__";

struct ArchiveSummary {
  struct Item {
    std::string path;
    std::uint64_t size = 0;
    bool executable = false;
  };
  std::string challenge_name;
  std::string entrypoint;
  std::uint32_t crc = 0;
  std::uint64_t payload_size = 0;
  std::vector<Item> items;
};

/// Throws PackagerError if a source is missing or the manifest is invalid.
void build_archive(const BundleManifest& manifest, const std::filesystem::path& output);
/// Checks the payload checksum and lists the contents without running or
/// extracting anything. Throws PackagerError when truncated or corrupted.
ArchiveSummary verify_archive(const std::filesystem::path& archive);
/// verify_archive, then writes every member under `destination`.
ArchiveSummary extract_archive(const std::filesystem::path& archive, const std::filesystem::path& destination);

}  // namespace ta
