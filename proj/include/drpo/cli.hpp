#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace drpo {

/// Runs one CLI invocation. Returns 0 on success, 1 on user error (bad flags
/// or config), 2 on runtime failure (divergence, io).
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// git blob hash ("blob <size>\0" + content, SHA-1) of a byte string.
std::string git_blob_hash(const std::string& content);

}  // namespace drpo
