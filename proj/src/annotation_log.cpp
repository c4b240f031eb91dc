#include "vocalcode/annotation_log.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <set>

#include <fmt/core.h>
#include <json.hpp>

#include "vocalcode/error.hpp"

namespace vocalcode::annotation_log {
namespace {

using nlohmann::ordered_json;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

ordered_json pass_json(const scheme::Pass& p) {
  ordered_json j;
  j["phase"] = scheme::to_string(p.phase);
  j["set_index"] = p.set_index;
  return j;
}

scheme::Pass pass_from(const nlohmann::json& j) {
  return {scheme::phase_from_string(j.at("phase").get<std::string>()), j.value("set_index", 0)};
}

std::string header_line() {
  ordered_json j;
  j["type"] = "log_header";
  j["format"] = kFormatName;
  j["version"] = kFormatVersion;
  j["scheme_version"] = scheme::kSchemeVersion;
  return j.dump();
}

}  // namespace

std::string serialize(const LogEntry& entry) {
  ordered_json j = std::visit(
      Overloaded{
          [](const SessionHeader& h) {
            ordered_json j;
            j["type"] = "session";
            j["session_id"] = h.session_id;
            j["coder_id"] = h.coder_id;
            j["pass"] = pass_json(h.pass);
            j["scheme_version"] = h.scheme_version;
            j["rng"] = h.rng;
            j["queue_spec"] = {{"seed", h.queue_spec.rng_seed},
                               {"n_duplicates", h.queue_spec.n_duplicates},
                               {"segment_ids", h.queue_spec.segment_ids}};
            return j;
          },
          [](const PlayEvent& p) {
            ordered_json j;
            j["type"] = "play";
            j["session_id"] = p.session_id;
            j["queue_item_id"] = p.queue_item_id;
            j["coder_id"] = p.coder_id;
            j["play_count"] = p.play_count;
            j["timestamp"] = p.timestamp;
            return j;
          },
          [](const LabelEvent& l) {
            ordered_json j;
            j["type"] = "label";
            j["session_id"] = l.session_id;
            j["queue_item_id"] = l.record.queue_item_id;
            j["segment_id"] = l.record.segment_id;
            j["coder_id"] = l.record.coder_id;
            j["class"] = scheme::code(l.record.cls);
            j["play_count"] = l.record.play_count;
            j["pass"] = pass_json(l.record.pass);
            j["timestamp"] = l.record.timestamp;
            return j;
          },
      },
      entry);
  return j.dump();
}

std::optional<LogEntry> parse_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    const auto type = j.at("type").get<std::string>();
    if (type == "log_header") {
      if (j.at("format").get<std::string>() != kFormatName) {
        throw Error(ErrorCode::kUnsupportedFormat, "not an annotation log");
      }
      if (j.at("version").get<int>() > kFormatVersion) {
        throw Error(ErrorCode::kUnsupportedFormat, "annotation log version is newer than this build");
      }
      return std::nullopt;
    }
    if (type == "session") {
      SessionHeader h;
      h.session_id = j.at("session_id").get<std::string>();
      h.coder_id = j.at("coder_id").get<std::string>();
      h.pass = pass_from(j.at("pass"));
      h.scheme_version = j.at("scheme_version").get<int>();
      h.rng = j.at("rng").get<std::string>();
      const auto& spec = j.at("queue_spec");
      h.queue_spec.rng_seed = spec.at("seed").get<std::uint64_t>();
      h.queue_spec.n_duplicates = spec.at("n_duplicates").get<std::size_t>();
      h.queue_spec.segment_ids = spec.at("segment_ids").get<std::vector<std::string>>();
      return h;
    }
    if (type == "play") {
      return PlayEvent{j.at("session_id").get<std::string>(), j.at("queue_item_id").get<std::string>(),
                       j.at("coder_id").get<std::string>(), j.at("play_count").get<int>(),
                       j.value("timestamp", std::string{})};
    }
    if (type == "label") {
      LabelEvent l;
      l.session_id = j.at("session_id").get<std::string>();
      l.record.queue_item_id = j.at("queue_item_id").get<std::string>();
      l.record.segment_id = j.at("segment_id").get<std::string>();
      l.record.coder_id = j.at("coder_id").get<std::string>();
      l.record.cls = scheme::class_from_code(j.at("class").get<int>());
      l.record.play_count = j.at("play_count").get<int>();
      l.record.pass = pass_from(j.at("pass"));
      l.record.timestamp = j.value("timestamp", std::string{});
      return l;
    }
    throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown log entry type '{}'", type));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("malformed log line: {}", e.what()));
  }
}

ReadResult read_log(const std::filesystem::path& path, std::uint64_t offset) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open log {}", path.string()));
  in.seekg(static_cast<std::streamoff>(offset));
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  ReadResult result;
  result.valid_bytes = offset;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < content.size()) {
    const std::size_t nl = content.find('\n', pos);
    if (nl == std::string::npos) {
      result.truncated_tail = true;
      break;
    }
    ++line_no;
    const std::string line = content.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      try {
        if (auto entry = parse_line(line)) result.entries.push_back(std::move(*entry));
      } catch (const Error& e) {
        throw Error(e.code(), fmt::format("{} line {}: {}", path.string(), line_no, e.what()));
      }
    }
    result.valid_bytes = offset + pos;
  }
  return result;
}

LogWriter::LogWriter(const std::filesystem::path& path) : path_(path) {
  std::uint64_t valid = 0;
  bool needs_header = true;
  std::error_code ec;
  if (std::filesystem::exists(path, ec) && std::filesystem::file_size(path, ec) > 0) {
    const auto existing = read_log(path);
    valid = existing.valid_bytes;
    needs_header = false;
  }
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw Error(ErrorCode::kIo, fmt::format("cannot open log {}: {}", path.string(), std::strerror(errno)));
  }
  // Drop a torn final line left by a crash mid-append.
  if (::ftruncate(fd_, static_cast<off_t>(valid)) != 0 || ::lseek(fd_, 0, SEEK_END) < 0) {
    ::close(fd_);
    throw Error(ErrorCode::kIo, fmt::format("cannot prepare log {}", path.string()));
  }
  size_ = valid;
  if (needs_header) write_line(header_line());
}

LogWriter::~LogWriter() {
  if (fd_ >= 0) ::close(fd_);
}

void LogWriter::append(const LogEntry& entry) {
  const std::string line = serialize(entry);
  std::lock_guard lock(mutex_);
  write_line(line);
}

std::uint64_t LogWriter::size() const {
  std::lock_guard lock(mutex_);
  return size_;
}

void LogWriter::write_line(const std::string& line) {
  std::string buf = line;
  buf.push_back('\n');
  const char* p = buf.data();
  std::size_t left = buf.size();
  while (left > 0) {
    const ssize_t n = ::write(fd_, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIo, fmt::format("log append failed: {}", std::strerror(errno)));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  if (::fsync(fd_) != 0) {
    throw Error(ErrorCode::kIo, fmt::format("log fsync failed: {}", std::strerror(errno)));
  }
  size_ += buf.size();
}

std::vector<scheme::AnnotationRecord> label_records(const std::vector<LogEntry>& entries,
                                                    const RecordFilter& filter) {
  std::vector<scheme::AnnotationRecord> out;
  for (const auto& e : entries) {
    const auto* label = std::get_if<LabelEvent>(&e);
    if (!label) continue;
    const auto& r = label->record;
    if (filter.coder_id && r.coder_id != *filter.coder_id) continue;
    if (filter.phase && r.pass.phase != *filter.phase) continue;
    if (filter.set_index && r.pass.set_index != *filter.set_index) continue;
    out.push_back(r);
  }
  return out;
}

std::vector<std::string> coders(const std::vector<LogEntry>& entries) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& e : entries) {
    std::string coder;
    if (const auto* h = std::get_if<SessionHeader>(&e)) coder = h->coder_id;
    if (const auto* l = std::get_if<LabelEvent>(&e)) coder = l->record.coder_id;
    if (!coder.empty() && seen.insert(coder).second) out.push_back(coder);
  }
  return out;
}

std::string utc_now() {
  using namespace std::chrono;
  const auto now = system_clock::now();
  const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = system_clock::to_time_t(now);
  std::tm tm{};
  ::gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  return fmt::format("{}.{:03d}Z", buf, static_cast<int>(ms));
}

}  // namespace vocalcode::annotation_log
