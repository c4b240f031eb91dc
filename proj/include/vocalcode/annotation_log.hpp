#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vocalcode/scheme.hpp"

namespace vocalcode::annotation_log {

// JSON Lines annotation log. The file opens with a format header; then each
// session contributes a header line followed by its play and label events in
// the order the server accepted them. Nothing is ever rewritten.

inline constexpr std::string_view kFormatName = "vocalcode.annotation-log";
inline constexpr int kFormatVersion = 1;

struct SessionHeader {
  std::string session_id;
  std::string coder_id;
  scheme::Pass pass;
  scheme::QueueSpec queue_spec;
  std::string rng = "mt19937_64";
  int scheme_version = scheme::kSchemeVersion;
  friend bool operator==(const SessionHeader&, const SessionHeader&) = default;
};

struct PlayEvent {
  std::string session_id;
  std::string queue_item_id;
  std::string coder_id;
  int play_count = 0;
  std::string timestamp;
  friend bool operator==(const PlayEvent&, const PlayEvent&) = default;
};

struct LabelEvent {
  std::string session_id;
  scheme::AnnotationRecord record;
  friend bool operator==(const LabelEvent&, const LabelEvent&) = default;
};

using LogEntry = std::variant<SessionHeader, PlayEvent, LabelEvent>;

std::string serialize(const LogEntry& entry);
/// Returns nullopt for the file header line. Throws kInvalidArgument on
/// malformed lines.
std::optional<LogEntry> parse_line(const std::string& line);

struct ReadResult {
  std::vector<LogEntry> entries;
  std::uint64_t valid_bytes = 0;  // offset just past the last complete line
  bool truncated_tail = false;    // trailing partial line from an interrupted write
};

/// Reads from `offset` (which must sit on a line boundary). A final line
/// without its newline is treated as an interrupted append and ignored.
ReadResult read_log(const std::filesystem::path& path, std::uint64_t offset = 0);

/// Append-only writer. Every append is flushed and fsync'd before returning,
/// so an acknowledged event survives a crash.
class LogWriter {
 public:
  explicit LogWriter(const std::filesystem::path& path);
  ~LogWriter();
  LogWriter(const LogWriter&) = delete;
  LogWriter& operator=(const LogWriter&) = delete;

  void append(const LogEntry& entry);
  std::uint64_t size() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  void write_line(const std::string& line);

  std::filesystem::path path_;
  int fd_ = -1;
  mutable std::mutex mutex_;
  std::uint64_t size_ = 0;
};

struct RecordFilter {
  std::optional<std::string> coder_id;
  std::optional<scheme::Phase> phase;
  std::optional<int> set_index;
};

std::vector<scheme::AnnotationRecord> label_records(const std::vector<LogEntry>& entries,
                                                    const RecordFilter& filter = {});
std::vector<std::string> coders(const std::vector<LogEntry>& entries);

/// Current UTC time as ISO-8601 with millisecond precision.
std::string utc_now();

}  // namespace vocalcode::annotation_log
