#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

namespace kba::test {

namespace fs = std::filesystem;

inline fs::path fixtures() { return KBA_FIXTURES; }
inline fs::path sample() { return KBA_SAMPLE; }

inline std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const fs::path& p, const std::string& s) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << s;
}

/// Scratch directory removed on scope exit.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> n{0};
        path_ = fs::temp_directory_path() /
                ("kba-test-" + std::to_string(::getpid()) + "-" + std::to_string(n++) + "-" +
                 std::to_string(std::random_device{}()));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

/// Copies the sample project (config, corpus, answers) into `dir`.
inline fs::path copy_sample(const fs::path& dir) {
    for (const char* item : {"config.json", "answers.jsonl", "questions.jsonl"}) {
        fs::copy_file(sample() / item, dir / item);
    }
    fs::copy(sample() / "corpus", dir / "corpus", fs::copy_options::recursive);
    return dir / "config.json";
}

} // namespace kba::test
