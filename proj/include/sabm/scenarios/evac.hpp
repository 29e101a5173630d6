#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sabm/promptkit.hpp"
#include "sabm/provider.hpp"
#include "sabm/runtime.hpp"

namespace sabm::evac {

enum class Cell { empty, wall, exit, obstacle };
enum class ExitId { left, bottom, right };
inline constexpr std::array<ExitId, 3> kExits{ExitId::left, ExitId::bottom, ExitId::right};

std::string_view to_string(ExitId exit);
std::optional<ExitId> exit_from_string(std::string_view text);

struct Pos {
  int r = 0;  // row, top to bottom
  int c = 0;  // column, left to right
  bool operator==(const Pos&) const = default;
};

int chebyshev(Pos a, Pos b);
std::string format_pos(Pos p);  // "(r, c)"

/// Square room bounded by walls. Exits sit on the boundary.
struct EvacGrid {
  int size = 33;
  std::vector<Cell> cells;
  std::vector<int> occupant;  // agent index or -1
  std::array<std::vector<Pos>, 3> exits;

  bool in_bounds(Pos p) const { return p.r >= 0 && p.c >= 0 && p.r < size && p.c < size; }
  std::size_t index(Pos p) const { return static_cast<std::size_t>(p.r * size + p.c); }
  Cell at(Pos p) const { return cells[index(p)]; }
  int occupant_at(Pos p) const { return occupant[index(p)]; }
  std::optional<ExitId> exit_at(Pos p) const;
  /// Interior cell an agent can stand on (empty, not an obstacle).
  bool walkable(Pos p) const { return in_bounds(p) && at(p) == Cell::empty; }
  std::size_t free_cells() const;
};

/// 33x33 room with left (3 cells), bottom (3 cells) and right (1 cell) exits.
EvacGrid make_room(int size = 33);
/// Layout text: one line per row, '#' wall, 'E' exit, 'X' obstacle, '.' floor.
/// Exit cells are assigned to the side they sit on.
EvacGrid parse_layout(const std::string& text);
/// Default obstacle layout shipped with the engine.
std::string default_obstacle_layout();

enum class Persona { strong_strong, strong_weak, weak_strong, weak_weak };  // physical_mental
std::string_view to_string(Persona persona);
/// Prompt text of the persona (without the trailing period).
std::string persona_text(Persona persona);
bool physically_strong(Persona persona);

enum class AgentStatus { normal, critical, disabled, escaped };
std::string_view to_string(AgentStatus status);

struct EvacAgent {
  int id = 0;
  Pos pos;
  Pos last_pos;
  Persona persona = Persona::strong_strong;
  double competitive = 0.0;
  double tolerance = 0.0;
  double tolerance_limit = 0.0;
  AgentStatus status = AgentStatus::normal;
  int overtaken = 0;
  std::optional<ExitId> target;
  std::vector<ExitId> target_history;
  std::string panic;
  std::array<double, 3> weights{0.0, 0.0, 0.0};  // ABM mode: proximity, people, density
  int left_round = 0;
  std::optional<ExitId> escaped_via;

  bool active() const { return status == AgentStatus::normal || status == AgentStatus::critical; }
};

nlohmann::json to_json_value(const EvacAgent& agent);
EvacAgent evac_agent_from_json(const nlohmann::json& j);

struct EvacParams {
  int n_agents = 100;
  bool obstacles = false;
  std::string obstacle_file;  // empty: built-in layout
  bool personas = true;
  bool conversation = false;
  double speak_probability = 0.2;
  double hearing_radius = 5.0;
  int view_radius = 10;
  double view_half_angle = 45.0;
  std::string mode = "sabm";  // sabm | abm
  LlmSettings settings;
  std::vector<VariantSelection> variants;

  static EvacParams from_json(const nlohmann::json& params);
};

/// Places agents uniformly on free cells, one quarter per persona, and draws
/// attributes from the per-persona normals. Throws CapacityExceeded.
std::vector<EvacAgent> build_grid(EvacGrid& grid, const EvacParams& params, RunContext& ctx);

struct ViewInfo {
  std::array<int, 3> people{0, 0, 0};
  std::array<int, 3> distance{0, 0, 0};
};

Pos nearest_exit_cell(const EvacGrid& grid, ExitId exit, Pos from);
ViewInfo field_of_view(const EvacGrid& grid, const std::vector<EvacAgent>& agents, const EvacAgent& agent,
                       int radius = 10, double half_angle_deg = 45.0);

/// Sum over occupied 8-neighbours of max(0, comp_j - comp_self).
double congestion_degree(const EvacGrid& grid, const std::vector<EvacAgent>& agents, const EvacAgent& agent);
/// Applies the overtaking rule for a given degree. Disabled agents must be
/// removed from the grid by the caller.
EvacAgent congestion_update(EvacAgent agent, double degree);

enum class Direction { up, down, left, right, upper_left, upper_right, lower_left, lower_right, stay };
inline constexpr std::array<Direction, 9> kDirections{Direction::up,         Direction::down,
                                                      Direction::left,       Direction::right,
                                                      Direction::upper_left, Direction::upper_right,
                                                      Direction::lower_left, Direction::lower_right,
                                                      Direction::stay};
std::string_view to_string(Direction d);
Pos step_to(Pos p, Direction d);
/// Compass word for where `to` lies seen from `from` ("lower-left"), "here" when equal.
std::string bearing_word(Pos from, Pos to);

/// Moves into walkable unoccupied cells or exit cells, plus stay.
std::vector<Direction> feasible_moves(const EvacGrid& grid, const EvacAgent& agent, bool diagonal = true);

/// Greedy move towards `goal`: minimal Chebyshev distance, ties by kDirections order.
Direction greedy_move(const std::vector<Direction>& options, Pos from, Pos goal);

struct MoveIntent {
  int agent = 0;  // index into the agent vector
  Direction direction = Direction::stay;
};

struct Placement {
  int agent = 0;
  Pos from;
  Pos to;
  std::optional<ExitId> escaped;
};

/// Applies intents. Conflicts on one cell are settled by a uniform draw;
/// losers stay. Winners entering an exit leave the grid.
std::vector<Placement> resolve_moves(const std::vector<MoveIntent>& intents, EvacGrid& grid,
                                     std::vector<EvacAgent>& agents, RunContext& ctx);

/// One char per cell: '#', 'E', 'X', '.', agents as persona digit 1-4.
std::string raster(const EvacGrid& grid, const std::vector<EvacAgent>& agents);

/// Scripted evacuee: nearest exit (ties left, bottom, right), greedy move.
/// Under the gallery objective it heads for the farthest exit instead.
class EvacOracle final : public ScenarioOracle {
 public:
  std::string respond(const ChatRequest& request) const override;
};

void register_templates(TemplateRegistry& registry);
std::unique_ptr<Scenario> make_scenario(const nlohmann::json& params, const TemplateRegistry& templates);

}  // namespace sabm::evac
