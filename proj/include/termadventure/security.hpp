#pragma once

// Progress hashing and challenge encryption.
//
// Both mechanisms are obfuscation, not security: the salts and the key ship
// inside the binary, so a determined student with the binary can recover
// them. The goal is to make tampering more work than solving the exercise.
// MD5 is kept for compatibility with existing progress records even though
// it is cryptographically broken.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "termadventure/challenge.hpp"

namespace ta {

using Digest = std::array<std::uint8_t, 16>;
using Bytes = std::vector<std::uint8_t>;

struct SaltTriple {
  std::string salt1;
  std::string salt2;
  std::string salt3;

  /// Throws std::invalid_argument unless all three are non-empty and pairwise distinct.
  void validate() const;

  /// The salts compiled into this build.
  static SaltTriple embedded();
};

class ChallengeKey {
 public:
  /// Throws std::invalid_argument unless the key is 16, 24 or 32 bytes.
  explicit ChallengeKey(Bytes key);
  static ChallengeKey from_hex(std::string_view hex);
  /// The key compiled into this build.
  static ChallengeKey embedded();

  std::span<const std::uint8_t> bytes() const { return key_; }
  /// 128, 192 or 256.
  unsigned bits() const { return static_cast<unsigned>(key_.size() * 8); }

 private:
  Bytes key_;
};

std::string to_hex(std::span<const std::uint8_t> bytes);
/// Strict decoding of exactly `2 * N` hex digits; nullopt otherwise.
std::optional<Bytes> from_hex(std::string_view hex);

/// MD5(salt1 || challenge || salt2 || level || salt3 || home), all as raw
/// UTF-8 bytes in exactly that order.
Digest compute_progress_hash(const SaltTriple& salts, std::string_view challenge, std::string_view level,
                             std::string_view home);

struct ProgressRecord {
  std::string hash_hex;  ///< 32 lowercase hex characters
  std::filesystem::path stored_at;

  /// The decoded digest, or nullopt unless hash_hex is exactly 32 lowercase hex digits.
  std::optional<Digest> digest() const;
};

/// `$HOME/.ta/progress/<challenge>`, one line of hex per file.
class ProgressStore {
 public:
  explicit ProgressStore(std::filesystem::path home);

  std::filesystem::path path_for(std::string_view challenge) const;
  /// Atomic write-then-rename, so concurrent shells never see a partial record.
  ProgressRecord save(std::string_view challenge, const Digest& digest) const;
  std::optional<ProgressRecord> load(std::string_view challenge) const;
  void clear(std::string_view challenge) const;

 private:
  std::filesystem::path home_;
};

class AmbiguousProgressError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scans every level of `spec` for one whose progress hash matches the
/// record. Returns nullopt when nothing matches (tampered or foreign record).
/// Throws AmbiguousProgressError when more than one level matches.
std::optional<std::string> resolve_level_from_hash(const ProgressRecord& record, const ChallengeSpec& spec,
                                                   const SaltTriple& salts, std::string_view home);

class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Container layout: "TAC1" | key-size code (1 = AES-128, 2 = AES-192,
/// 3 = AES-256) | 12-byte nonce | ciphertext | 16-byte GCM tag. The header
/// bytes are authenticated as associated data.
inline constexpr std::string_view container_magic = "TAC1";
inline constexpr std::size_t container_nonce_size = 12;
inline constexpr std::size_t container_tag_size = 16;
inline constexpr std::size_t container_header_size = 4 + 1 + container_nonce_size;

Bytes encrypt_challenge(std::span<const std::uint8_t> plaintext, const ChallengeKey& key);
/// Throws IntegrityError for a wrong key, a corrupted container, or a
/// container that is not in the format above. Never returns partial plaintext.
Bytes decrypt_challenge(std::span<const std::uint8_t> ciphertext, const ChallengeKey& key);

bool is_encrypted_container(std::span<const std::uint8_t> data);

inline std::span<const std::uint8_t> as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

}  // namespace ta
