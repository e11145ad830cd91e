// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace mspt {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> bytes);
Digest sha256(const std::string& text);
Digest sha256_file(const std::filesystem::path& path);
std::string to_hex(const Digest& digest);

} // namespace mspt
