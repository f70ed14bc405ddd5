#pragma once

#include "twincov/error.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

namespace twincov::detail {

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never observe a partially written file.
inline void write_file_atomically(const std::string& path, std::string_view bytes) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path() && !fs::exists(target.parent_path())) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
        if (ec) fail(ErrorCode::Io, "cannot create directory '" + target.parent_path().string() + "'");
    }
    fs::path tmp = target;
    tmp += ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::Io, "cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) fail(ErrorCode::Io, "write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        fail(ErrorCode::Io, "cannot rename onto '" + path + "'");
    }
}

}  // namespace twincov::detail
