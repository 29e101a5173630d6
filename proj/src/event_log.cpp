#include "sabm/event_log.hpp"

#include "sabm/error.hpp"

namespace sabm {

using nlohmann::json;

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::prompt: return "prompt";
    case EventKind::response: return "response";
    case EventKind::parsed: return "parsed";
    case EventKind::world: return "world";
    case EventKind::detector: return "detector";
    case EventKind::checkpoint: return "checkpoint";
    case EventKind::rng: return "rng";
  }
  return "world";
}

EventKind event_kind_from_string(std::string_view text) {
  for (auto k : {EventKind::prompt, EventKind::response, EventKind::parsed, EventKind::world, EventKind::detector,
                 EventKind::checkpoint, EventKind::rng}) {
    if (to_string(k) == text) return k;
  }
  throw SerializationError("unknown event kind '" + std::string(text) + "'");
}

json to_json_value(const EventRecord& rec) {
  json j = {{"run_id", rec.run_id}, {"seq", rec.seq},     {"round", rec.round},
            {"stage", rec.stage},   {"kind", to_string(rec.kind)}, {"payload", rec.payload}};
  if (!rec.agent_id.empty()) j["agent_id"] = rec.agent_id;
  if (!rec.prompt_digest.empty()) j["prompt_digest"] = rec.prompt_digest;
  return j;
}

EventRecord event_from_json(const json& j) {
  EventRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.seq = j.at("seq").get<std::uint64_t>();
  r.round = j.at("round").get<int>();
  r.stage = j.at("stage").get<std::string>();
  r.kind = event_kind_from_string(j.at("kind").get<std::string>());
  r.payload = j.at("payload");
  r.agent_id = j.value("agent_id", "");
  r.prompt_digest = j.value("prompt_digest", "");
  return r;
}

EventLog::EventLog() = default;

EventLog::EventLog(const std::filesystem::path& path, bool keep_records) : path_(path), keep_records_(keep_records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot open event log " + path.string());
}

const EventRecord& EventLog::append(EventRecord rec) {
  if (rec.round < last_round_) {
    throw Error("event log round went backwards (" + std::to_string(rec.round) + " < " +
                std::to_string(last_round_) + ")");
  }
  rec.seq = next_seq_++;
  last_round_ = rec.round;
  if (path_) {
    const std::string line = to_json_value(rec).dump() + "\n";
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    if (!out_) throw IoError("write failed on event log");
    bytes_ += line.size();
  }
  if (keep_records_ || !path_) {
    records_.push_back(std::move(rec));
    return records_.back();
  }
  last_ = std::move(rec);
  return last_;
}

void EventLog::truncate_file(const std::filesystem::path& path, std::uint64_t bytes) {
  std::filesystem::resize_file(path, bytes);
}

void EventLog::resume_from(std::uint64_t next_seq, int last_round, std::uint64_t bytes) {
  next_seq_ = next_seq;
  last_round_ = last_round;
  bytes_ = bytes;
  if (path_) {
    out_.close();
    truncate_file(*path_, bytes);
    out_.open(*path_, std::ios::binary | std::ios::app);
    if (!out_) throw IoError("cannot reopen event log " + path_->string());
  }
}

void EventLog::flush() {
  if (path_) out_.flush();
}

std::vector<EventRecord> EventLog::read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read event log " + path.string());
  std::vector<EventRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(event_from_json(json::parse(line)));
  }
  return out;
}

}  // namespace sabm
