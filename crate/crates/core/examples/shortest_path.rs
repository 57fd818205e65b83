//! Plans a grid path from the robot to each pedestrian in a generated
//! scenario with A*, cross-checks the cost against Dijkstra, and writes the
//! path to the farthest reachable pedestrian as CSV.

use amodal_pursuit::planner::{astar, dijkstra, write_path_csv, OccupancyGrid, PlannerConfig};
use amodal_pursuit::world::{generate_scenario, GeneratorParams};

fn main() {
    let scenario = generate_scenario(&GeneratorParams::occlusion(), 2).expect("scenario");
    let cfg = PlannerConfig::default();
    let grid = OccupancyGrid::from_walls(
        scenario.bounds,
        &scenario.walls(),
        cfg.resolution,
        scenario.robot_radius + cfg.margin,
    );
    let start = grid
        .cell_of(scenario.robot_start.position())
        .expect("robot inside the room");
    let mut longest = None;
    for h in &scenario.humans {
        let Some(goal) = grid.cell_of(h.position()) else {
            continue;
        };
        let a = astar(&grid, start, goal, 0.0).expect("valid cells");
        let d = dijkstra(&grid, start, goal, 0.0).expect("valid cells");
        match (&a, &d) {
            (Some(a), Some(d)) => {
                println!(
                    "human {}: {} cells, cost {:.3} (dijkstra {:.3})",
                    h.id,
                    a.cells.len(),
                    a.cost,
                    d.cost
                );
                if longest
                    .as_ref()
                    .is_none_or(|l: &amodal_pursuit::planner::GridPath| a.cost > l.cost)
                {
                    longest = Some(a.clone());
                }
            }
            _ => println!("human {}: unreachable", h.id),
        }
    }
    if let Some(path) = longest {
        let points: Vec<_> = path.cells.iter().map(|&(i, j)| grid.center(i, j)).collect();
        write_path_csv(&points, &mut std::io::stdout().lock()).expect("stdout");
    }
}
