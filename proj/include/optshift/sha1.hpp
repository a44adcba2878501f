#pragma once

#include <string>

namespace optshift {

// Hex SHA-1 digest of a byte string.
std::string sha1_hex(const std::string& bytes);

// Git-style content hash: sha1("blob <len>\0" + content).
std::string git_blob_hash(const std::string& content);

}  // namespace optshift
