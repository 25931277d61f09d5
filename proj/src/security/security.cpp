#include "termadventure/security.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <memory>

#include <unistd.h>

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

#include "termadventure/build_config.hpp"

namespace ta {

namespace {

struct CipherCtxDeleter {
  void operator()(EVP_CIPHER_CTX* ctx) const { EVP_CIPHER_CTX_free(ctx); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;

const EVP_CIPHER* gcm_cipher(std::size_t key_size) {
  switch (key_size) {
    case 16: return EVP_aes_128_gcm();
    case 24: return EVP_aes_192_gcm();
    case 32: return EVP_aes_256_gcm();
    default: return nullptr;
  }
}

std::uint8_t key_size_code(std::size_t key_size) { return static_cast<std::uint8_t>((key_size - 8) / 8); }

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

void write_file_atomically(const std::filesystem::path& target, std::string_view content) {
  std::filesystem::create_directories(target.parent_path());
  auto temp = target;
  temp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + temp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("cannot write " + temp.string());
  }
  std::filesystem::rename(temp, target);
}

}  // namespace

void SaltTriple::validate() const {
  if (salt1.empty() || salt2.empty() || salt3.empty()) throw std::invalid_argument("salt parts must be non-empty");
  if (salt1 == salt2 || salt2 == salt3 || salt1 == salt3) {
    throw std::invalid_argument("salt parts must be pairwise distinct");
  }
}

SaltTriple SaltTriple::embedded() {
  SaltTriple salts{std::string(build::salt1), std::string(build::salt2), std::string(build::salt3)};
  salts.validate();
  return salts;
}

ChallengeKey::ChallengeKey(Bytes key) : key_(std::move(key)) {
  if (!gcm_cipher(key_.size())) {
    throw std::invalid_argument("challenge key must be 16, 24 or 32 bytes, got " + std::to_string(key_.size()));
  }
}

ChallengeKey ChallengeKey::from_hex(std::string_view hex) {
  auto bytes = ta::from_hex(hex);
  if (!bytes) throw std::invalid_argument("challenge key is not valid hex");
  return ChallengeKey(std::move(*bytes));
}

ChallengeKey ChallengeKey::embedded() { return from_hex(build::challenge_key_hex); }

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (const auto b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0x0f]);
  }
  return out;
}

std::optional<Bytes> from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) return std::nullopt;
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int hi = hex_value(hex[2 * i]);
    const int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    out[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return out;
}

Digest compute_progress_hash(const SaltTriple& salts, std::string_view challenge, std::string_view level,
                             std::string_view home) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_md5(), nullptr) != 1) throw std::runtime_error("MD5 unavailable");
  for (const std::string_view part : {std::string_view(salts.salt1), challenge, std::string_view(salts.salt2), level,
                                      std::string_view(salts.salt3), home}) {
    EVP_DigestUpdate(ctx.get(), part.data(), part.size());
  }
  Digest digest{};
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &length);
  return digest;
}

std::optional<Digest> ProgressRecord::digest() const {
  if (hash_hex.size() != 32) return std::nullopt;
  const auto bytes = from_hex(hash_hex);
  if (!bytes || to_hex(*bytes) != hash_hex) return std::nullopt;
  Digest digest{};
  std::copy(bytes->begin(), bytes->end(), digest.begin());
  return digest;
}

ProgressStore::ProgressStore(std::filesystem::path home) : home_(std::move(home)) {}

std::filesystem::path ProgressStore::path_for(std::string_view challenge) const {
  std::string file;
  for (const char c : challenge) {
    const bool safe = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
                      c == '-' || c == '.';
    file.push_back(safe ? c : '_');
  }
  if (file.empty() || file == "." || file == "..") file = "_";
  return home_ / ".ta" / "progress" / file;
}

ProgressRecord ProgressStore::save(std::string_view challenge, const Digest& digest) const {
  ProgressRecord record{to_hex(digest), path_for(challenge)};
  write_file_atomically(record.stored_at, record.hash_hex + "\n");
  return record;
}

std::optional<ProgressRecord> ProgressStore::load(std::string_view challenge) const {
  const auto path = path_for(challenge);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  // Kept verbatim apart from the final newline; digest() rejects anything
  // that is not exactly what save() writes.
  std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (!text.empty() && text.back() == '\n') text.pop_back();
  return ProgressRecord{text, path};
}

void ProgressStore::clear(std::string_view challenge) const {
  std::error_code ec;
  std::filesystem::remove(path_for(challenge), ec);
}

std::optional<std::string> resolve_level_from_hash(const ProgressRecord& record, const ChallengeSpec& spec,
                                                   const SaltTriple& salts, std::string_view home) {
  const auto stored = record.digest();
  if (!stored) return std::nullopt;
  std::optional<std::string> match;
  for (const auto& level : spec.levels) {
    if (compute_progress_hash(salts, spec.challenge_name, level.name, home) != *stored) continue;
    if (match && *match != level.name) {
      throw AmbiguousProgressError("progress record matches both '" + *match + "' and '" + level.name +
                                   "'; the salts or challenge file are corrupted");
    }
    match = level.name;
  }
  return match;
}

bool is_encrypted_container(std::span<const std::uint8_t> data) {
  return data.size() >= container_magic.size() &&
         std::equal(container_magic.begin(), container_magic.end(), data.begin(),
                    [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; });
}

Bytes encrypt_challenge(std::span<const std::uint8_t> plaintext, const ChallengeKey& key) {
  const auto key_bytes = key.bytes();
  Bytes out(container_header_size + plaintext.size() + container_tag_size);
  std::copy(container_magic.begin(), container_magic.end(), out.begin());
  out[4] = key_size_code(key_bytes.size());
  std::uint8_t* nonce = out.data() + 5;
  if (RAND_bytes(nonce, static_cast<int>(container_nonce_size)) != 1) {
    throw std::runtime_error("cannot generate a random nonce");
  }

  CipherCtx ctx(EVP_CIPHER_CTX_new());
  int length = 0;
  if (!ctx || EVP_EncryptInit_ex(ctx.get(), gcm_cipher(key_bytes.size()), nullptr, nullptr, nullptr) != 1 ||
      EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, static_cast<int>(container_nonce_size), nullptr) != 1 ||
      EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, key_bytes.data(), nonce) != 1 ||
      EVP_EncryptUpdate(ctx.get(), nullptr, &length, out.data(), static_cast<int>(container_header_size)) != 1) {
    throw std::runtime_error("AES-GCM initialisation failed");
  }
  std::uint8_t* cipher = out.data() + container_header_size;
  int written = 0;
  if (!plaintext.empty() &&
      EVP_EncryptUpdate(ctx.get(), cipher, &written, plaintext.data(), static_cast<int>(plaintext.size())) != 1) {
    throw std::runtime_error("AES-GCM encryption failed");
  }
  int final_len = 0;
  if (EVP_EncryptFinal_ex(ctx.get(), cipher + written, &final_len) != 1 ||
      EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, static_cast<int>(container_tag_size),
                          out.data() + container_header_size + plaintext.size()) != 1) {
    throw std::runtime_error("AES-GCM finalisation failed");
  }
  return out;
}

Bytes decrypt_challenge(std::span<const std::uint8_t> ciphertext, const ChallengeKey& key) {
  if (ciphertext.size() < container_header_size + container_tag_size || !is_encrypted_container(ciphertext)) {
    throw IntegrityError("not an encrypted challenge container");
  }
  const auto key_bytes = key.bytes();
  if (ciphertext[4] != key_size_code(key_bytes.size())) {
    throw IntegrityError("container was sealed with AES-" + std::to_string((ciphertext[4] + 1) * 64) +
                         ", key is AES-" + std::to_string(key.bits()));
  }
  const std::size_t body_size = ciphertext.size() - container_header_size - container_tag_size;
  const std::uint8_t* nonce = ciphertext.data() + 5;
  const std::uint8_t* body = ciphertext.data() + container_header_size;
  Bytes tag(body + body_size, body + body_size + container_tag_size);

  CipherCtx ctx(EVP_CIPHER_CTX_new());
  int length = 0;
  if (!ctx || EVP_DecryptInit_ex(ctx.get(), gcm_cipher(key_bytes.size()), nullptr, nullptr, nullptr) != 1 ||
      EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, static_cast<int>(container_nonce_size), nullptr) != 1 ||
      EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, key_bytes.data(), nonce) != 1 ||
      EVP_DecryptUpdate(ctx.get(), nullptr, &length, ciphertext.data(), static_cast<int>(container_header_size)) != 1) {
    throw std::runtime_error("AES-GCM initialisation failed");
  }
  Bytes plain(body_size);
  int written = 0;
  if (body_size > 0 &&
      EVP_DecryptUpdate(ctx.get(), plain.data(), &written, body, static_cast<int>(body_size)) != 1) {
    throw IntegrityError("challenge container failed to decrypt");
  }
  int final_len = 0;
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, static_cast<int>(container_tag_size), tag.data()) != 1 ||
      EVP_DecryptFinal_ex(ctx.get(), plain.data() + written, &final_len) != 1) {
    OPENSSL_cleanse(plain.data(), plain.size());
    throw IntegrityError("challenge container failed its integrity check (wrong key or corrupted file)");
  }
  return plain;
}

}  // namespace ta
