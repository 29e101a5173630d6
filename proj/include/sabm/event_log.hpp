#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace sabm {

enum class EventKind { prompt, response, parsed, world, detector, checkpoint, rng };

std::string_view to_string(EventKind kind);
EventKind event_kind_from_string(std::string_view text);

struct EventRecord {
  std::string run_id;
  std::uint64_t seq = 0;
  int round = 0;
  std::string stage;
  std::string agent_id;  // empty when not agent-specific
  EventKind kind = EventKind::world;
  nlohmann::json payload = nlohmann::json::object();
  std::string prompt_digest;  // hex cache key, empty when absent
};

nlohmann::json to_json_value(const EventRecord& rec);
EventRecord event_from_json(const nlohmann::json& j);

/// Append-only JSON Lines journal. Sequence numbers are assigned here and
/// round numbers may never decrease.
class EventLog {
 public:
  /// In-memory only; records are retained.
  EventLog();
  /// File-backed. `keep_records` retains parsed records in memory too.
  explicit EventLog(const std::filesystem::path& path, bool keep_records = false);

  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  const EventRecord& append(EventRecord rec);

  /// Continue an existing file: keeps its first `bytes` bytes and resumes
  /// numbering at `next_seq`.
  static void truncate_file(const std::filesystem::path& path, std::uint64_t bytes);
  void resume_from(std::uint64_t next_seq, int last_round, std::uint64_t bytes);

  std::uint64_t next_seq() const { return next_seq_; }
  std::uint64_t bytes_written() const { return bytes_; }
  int last_round() const { return last_round_; }
  const std::vector<EventRecord>& records() const { return records_; }
  const std::optional<std::filesystem::path>& path() const { return path_; }
  void flush();

  static std::vector<EventRecord> read_file(const std::filesystem::path& path);

 private:
  std::optional<std::filesystem::path> path_;
  std::ofstream out_;
  bool keep_records_ = true;
  std::vector<EventRecord> records_;
  std::uint64_t next_seq_ = 0;
  std::uint64_t bytes_ = 0;
  int last_round_ = 0;
  EventRecord last_;
};

}  // namespace sabm
