#include "kba/error.hpp"
#include "kba/markdown.hpp"
#include "kba/util.hpp"

#include <array>
#include <cerrno>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace kba {

namespace {

constexpr std::size_t kMaxDiagnostics = 64 * 1024;

std::string shell_quote(std::string_view s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') {
            out += "'\\''";
        } else {
            out += c;
        }
    }
    out += "'";
    return out;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
    return s;
}

bool program_available(const std::string& command) {
    auto words = trim(command);
    auto prog = words.substr(0, words.find_first_of(" \t"));
    if (prog.empty()) return false;
    if (prog.find('/') != std::string::npos) return ::access(prog.c_str(), X_OK) == 0;
    const char* path = std::getenv("PATH");
    if (path == nullptr) return false;
    for (const auto& dir : split(path, ':')) {
        auto candidate = (dir.empty() ? fs::path(".") : fs::path(dir)) / prog;
        if (::access(candidate.c_str(), X_OK) == 0) return true;
    }
    return false;
}

std::string extension_for(std::string_view lang) {
    auto l = to_lower_ascii(lang);
    if (l == "c") return ".c";
    if (l == "cpp" || l == "c++" || l == "cxx" || l == "cc") return ".cpp";
    if (l == "cuda" || l == "cu") return ".cu";
    if (l == "python" || l == "py") return ".py";
    if (l == "fortran" || l == "f90") return ".F90";
    if (l == "sh" || l == "bash" || l == "shell" || l == "console") return ".sh";
    if (l == "make" || l == "makefile") return ".mk";
    return ".txt";
}

struct RunResult {
    int exit_code = -1;
    bool timed_out = false;
    std::string output;
};

RunResult run_shell(const std::string& command, std::chrono::milliseconds timeout) {
    int fds[2];
    if (::pipe(fds) != 0) {
        throw Error(Errc::io_error, "pipe() failed");
    }
    pid_t pid = ::fork();
    if (pid < 0) {
        ::close(fds[0]);
        ::close(fds[1]);
        throw Error(Errc::io_error, "fork() failed");
    }
    if (pid == 0) {
        ::setpgid(0, 0);
        ::dup2(fds[1], STDOUT_FILENO);
        ::dup2(fds[1], STDERR_FILENO);
        ::close(fds[0]);
        ::close(fds[1]);
        ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(fds[1]);

    RunResult rr;
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    std::array<char, 4096> buf{};
    while (true) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            rr.timed_out = true;
            break;
        }
        pollfd pfd{fds[0], POLLIN, 0};
        int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
        if (ready < 0 && errno == EINTR) continue;
        if (ready == 0) {
            rr.timed_out = true;
            break;
        }
        auto got = ::read(fds[0], buf.data(), buf.size());
        if (got <= 0) break;
        if (rr.output.size() < kMaxDiagnostics) rr.output.append(buf.data(), static_cast<std::size_t>(got));
    }
    ::close(fds[0]);
    if (rr.timed_out) ::kill(-pid, SIGKILL);
    int status = 0;
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
    if (WIFEXITED(status)) {
        rr.exit_code = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
        rr.exit_code = 128 + WTERMSIG(status);
    }
    if (rr.output.size() > kMaxDiagnostics) rr.output.resize(kMaxDiagnostics);
    return rr;
}

} // namespace

std::vector<CodeCheckResult> check_code(const AnswerDocument& doc, const CodeCheckHook& hook) {
    std::vector<CodeCheckResult> results;
    for (std::size_t i = 0; i < doc.blocks.size(); ++i) {
        if (doc.blocks[i].kind == BlockKind::code) results.push_back({i, CheckStatus::not_run, {}, -1});
    }
    if (trim(hook.command).empty() || results.empty()) return results;
    if (!program_available(hook.command)) {
        for (auto& r : results) r.diagnostics = "hook-unavailable: cannot find program for '" + hook.command + "'";
        return results;
    }

    char tmpl[] = "/tmp/kba-check-XXXXXX";
    if (::mkdtemp(tmpl) == nullptr) {
        throw Error(Errc::io_error, "cannot create temp dir for code checks");
    }
    const fs::path dir(tmpl);
    for (auto& r : results) {
        const auto& block = doc.blocks[r.block_index];
        auto file = dir / ("block_" + std::to_string(r.block_index) + extension_for(block.language));
        {
            std::ofstream out(file, std::ios::binary);
            out << block.body;
        }
        auto cmd = replace_all(hook.command, "{file}", shell_quote(file.string()));
        cmd = replace_all(cmd, "{lang}", shell_quote(block.language));
        auto rr = run_shell(cmd, hook.timeout);
        r.exit_code = rr.exit_code;
        r.diagnostics = std::move(rr.output);
        if (rr.timed_out) {
            r.status = CheckStatus::failed;
            r.diagnostics += "\n[hook timed out after " + std::to_string(hook.timeout.count()) + " ms]";
        } else {
            r.status = rr.exit_code == 0 ? CheckStatus::passed : CheckStatus::failed;
        }
    }
    std::error_code ec;
    fs::remove_all(dir, ec);
    return results;
}

} // namespace kba
