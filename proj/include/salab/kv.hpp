#pragma once

// Flat key=value text files: one pair per line, '#' starts a comment, blank
// lines ignored, surrounding whitespace trimmed. Keys are emitted sorted.

#include <map>
#include <string>

namespace salab {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text, const std::string& origin = "<text>");
KeyValues read_key_values(const std::string& path);
std::string format_key_values(const KeyValues& kv);
void write_key_values(const std::string& path, const KeyValues& kv);

/// Typed lookups; a present but malformed value is a config error.
double kv_double(const KeyValues& kv, const std::string& key, double fallback);
long long kv_int(const KeyValues& kv, const std::string& key, long long fallback);
bool kv_bool(const KeyValues& kv, const std::string& key, bool fallback);
std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace salab
