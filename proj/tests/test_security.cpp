#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "support.hpp"
#include "termadventure/security.hpp"

using namespace ta;

namespace {

std::string random_text(std::mt19937_64& rng, std::size_t max_length) {
  std::string s(rng() % (max_length + 1), '\0');
  for (auto& c : s) c = static_cast<char>(rng() % 256);
  return s;
}

ChallengeSpec three_levels() {
  ChallengeSpec spec;
  spec.challenge_name = "demo";
  spec.levels = {{"lvl1", "true", {"lvl2"}, ""}, {"lvl2", "true", {"lvl3"}, ""}, {"lvl3", "true", {}, ""}};
  spec.entry_level = "lvl1";
  return spec;
}

}  // namespace

TEST_SUITE("security") {
  TEST_CASE("the reference MD5 agrees with the RFC 1321 test suite") {
    CHECK(oracle::md5_hex("") == "d41d8cd98f00b204e9800998ecf8427e");
    CHECK(oracle::md5_hex("abc") == "900150983cd24fb0d6963f7d28e17f72");
    CHECK(oracle::md5_hex("message digest") == "f96b697d7cb7938d525a2f31aaf161d0");
    CHECK(oracle::md5_hex("12345678901234567890123456789012345678901234567890123456789012345678901234567890") ==
          "57edf4a22be3c955ac49da2e2107b67a");
  }

  TEST_CASE("progress hash is MD5 of the fields concatenated in order") {
    const SaltTriple salts{"s1", "s2", "s3"};
    const auto digest = compute_progress_hash(salts, "chal", "lvl1", "/home/u");
    CHECK(to_hex(digest) == oracle::md5_hex("s1chals2lvl1s3/home/u"));
  }

  TEST_CASE("property: hash matches the reference on random tuples") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 300; ++i) {
      const SaltTriple salts{random_text(rng, 20), random_text(rng, 20), random_text(rng, 20)};
      const auto challenge = random_text(rng, 30);
      const auto level = random_text(rng, 30);
      const auto home = random_text(rng, 70);
      CHECK(to_hex(compute_progress_hash(salts, challenge, level, home)) ==
            oracle::md5_hex(salts.salt1 + challenge + salts.salt2 + level + salts.salt3 + home));
    }
  }

  TEST_CASE("salts must be present and distinct") {
    CHECK_NOTHROW(SaltTriple{"a", "b", "c"}.validate());
    CHECK_THROWS_AS((SaltTriple{"a", "a", "c"}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((SaltTriple{"", "b", "c"}.validate()), std::invalid_argument);
    CHECK_NOTHROW(SaltTriple::embedded().validate());
  }

  TEST_CASE("progress store round trip and tamper detection") {
    support::TempDir home;
    const auto spec = three_levels();
    const SaltTriple salts{"x1", "x2", "x3"};
    ProgressStore store(home.path());
    CHECK_FALSE(store.load("demo"));
    for (const auto& level : spec.levels) {
      store.save("demo", compute_progress_hash(salts, "demo", level.name, home.path().string()));
      const auto record = store.load("demo");
      REQUIRE(record);
      CHECK(resolve_level_from_hash(*record, spec, salts, home.path().string()) == level.name);
      // A different home or salt is a different record.
      CHECK_FALSE(resolve_level_from_hash(*record, spec, salts, "/elsewhere"));
      CHECK_FALSE(resolve_level_from_hash(*record, spec, SaltTriple{"y1", "x2", "x3"}, home.path().string()));
      for (std::size_t i = 0; i < record->hash_hex.size(); ++i) {
        auto tampered = *record;
        tampered.hash_hex[i] = tampered.hash_hex[i] == '0' ? '1' : '0';
        CHECK_FALSE(resolve_level_from_hash(tampered, spec, salts, home.path().string()));
      }
    }
    auto garbage = *store.load("demo");
    garbage.hash_hex = "not hex";
    CHECK_FALSE(garbage.digest());
    CHECK_FALSE(resolve_level_from_hash(garbage, spec, salts, home.path().string()));
    store.clear("demo");
    CHECK_FALSE(store.load("demo"));
  }

  TEST_CASE("hex helpers are strict") {
    CHECK(from_hex("00ff") == Bytes{0x00, 0xff});
    CHECK_FALSE(from_hex("0"));
    CHECK_FALSE(from_hex("zz"));
    CHECK(to_hex(Bytes{0xde, 0xad}) == "dead");
  }

  TEST_CASE("encryption round trip at every key size, wrong key always rejected") {
    std::mt19937_64 rng(5);
    for (const std::size_t size : {16u, 24u, 32u}) {
      for (int i = 0; i < 20; ++i) {
        Bytes key_bytes(size), other(size);
        for (auto& b : key_bytes) b = static_cast<std::uint8_t>(rng());
        other = key_bytes;
        other[rng() % size] ^= static_cast<std::uint8_t>(1 + rng() % 255);
        const ChallengeKey key(key_bytes);
        CHECK(key.bits() == size * 8);
        const auto plain = random_text(rng, 500);
        const auto sealed = encrypt_challenge(as_bytes(plain), key);
        CHECK(is_encrypted_container(sealed));
        const auto opened = decrypt_challenge(sealed, key);
        CHECK(std::string(opened.begin(), opened.end()) == plain);
        CHECK_THROWS_AS(decrypt_challenge(sealed, ChallengeKey(other)), IntegrityError);
        auto flipped = sealed;
        flipped[rng() % flipped.size()] ^= 0x40;
        CHECK_THROWS_AS(decrypt_challenge(flipped, key), IntegrityError);
      }
    }
    CHECK_THROWS_AS(ChallengeKey(Bytes(15)), std::invalid_argument);
    CHECK_THROWS_AS(decrypt_challenge(as_bytes("TAC1"), ChallengeKey::embedded()), IntegrityError);
    CHECK_FALSE(is_encrypted_container(as_bytes("name: lvl1\n")));
  }

  TEST_CASE("two encryptions of the same text differ") {
    const auto key = ChallengeKey::embedded();
    CHECK(encrypt_challenge(as_bytes("same"), key) != encrypt_challenge(as_bytes("same"), key));
  }
}
