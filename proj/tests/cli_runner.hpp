#pragma once

#include <array>
#include <cstdio>
#include <string>
#include <sys/wait.h>

namespace cli {

struct Result {
    int code = -1;
    std::string out;  // stdout and stderr combined
};

inline Result run(const std::string& args) {
    const std::string cmd = std::string("\"") + GAPROTO_CLI_PATH + "\" " + args + " 2>&1";
    Result r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

}  // namespace cli
