#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace abacus {

std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);
bool iequals(std::string_view a, std::string_view b) noexcept;
std::string_view trim(std::string_view s) noexcept;

/// Lower-case hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);
std::string sha256_file_hex(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes through a sibling temp file and renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Replaces `{name}` placeholders for the given keys; unknown braces are left alone.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

/// 1-based line number of byte `offset` in `text`.
std::size_t line_of_offset(std::string_view text, std::size_t offset) noexcept;

/// Decodes one UTF-8 code point starting at `pos`; advances `pos`. Invalid bytes
/// decode as themselves (one byte).
char32_t next_codepoint(std::string_view s, std::size_t& pos) noexcept;

} // namespace abacus
