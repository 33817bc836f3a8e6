#include "kba/error.hpp"
#include "kba/util.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace kba;

TEST_CASE("sha256 matches published test vectors") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("base64 round trips and accepts the url-safe alphabet") {
    CHECK(base64_encode("") == "");
    CHECK(base64_encode("f") == "Zg==");
    CHECK(base64_encode("foobar") == "Zm9vYmFy");
    CHECK(base64_decode("Zm9vYg") == "foob");
    CHECK(base64_decode("Zm9v\r\nYmFy") == "foobar");
    const std::string bin{"\xfb\xff\x00\x01", 4};
    CHECK(base64_decode(base64_encode(bin)) == bin);
    CHECK(base64_decode("-_8=") == base64_decode("+/8="));
    CHECK_THROWS_AS(base64_decode("Zm9v!"), Error);
}

TEST_CASE("utf8 boundaries count code points") {
    const std::string s = "a\xc3\xa9\xe2\x80\x96z"; // a é ‖ z
    CHECK(utf8_length(s) == 4);
    auto b = utf8_boundaries(s);
    REQUIRE(b.size() == 5);
    CHECK(b[1] == 1);
    CHECK(b[2] == 3);
    CHECK(b[3] == 6);
    CHECK(b[4] == s.size());
}

TEST_CASE("string helpers") {
    CHECK(trim("  x y \n") == "x y");
    CHECK(to_lower_ascii("KSPSolve") == "kspsolve");
    CHECK(split("a,,b", ',') == std::vector<std::string>{"a", "", "b"});
    CHECK(join({"a", "b"}, "-") == "a-b");
    CHECK(starts_with_ci("Re: hi", "re:"));
}

TEST_CASE("glob matching") {
    CHECK(glob_match("**/manualpages/**", "manualpages/KSP/KSPSolve.md"));
    CHECK(glob_match("**/manualpages/**", "docs/manualpages/Vec/VecCreate.md"));
    CHECK_FALSE(glob_match("**/manualpages/**", "manual/ksp.md"));
    CHECK(glob_match("changes/*.md", "changes/v3.20.md"));
    CHECK_FALSE(glob_match("changes/*.md", "changes/old/v1.md"));
    CHECK(glob_match("a?c", "abc"));
}

TEST_CASE("atomic write replaces the file") {
    test::TempDir dir;
    write_file_atomic(dir / "f.txt", "one");
    write_file_atomic(dir / "f.txt", "two");
    CHECK(read_text_file(dir / "f.txt") == "two");
    CHECK_THROWS_AS(read_text_file(dir / "missing"), Error);
}

TEST_CASE("iso8601 formatting") {
    CHECK(iso8601_utc(std::chrono::system_clock::time_point{}).rfind("1970-01-01T00:00:00", 0) == 0);
}
