//! Collect scripted-expert demonstrations for each reference task and
//! print episode statistics. Episodes land in a temp directory in the
//! on-disk format the training pipeline reads.

use flowmot::data::io::{load_task_episodes, save_episodes};
use flowmot::env::{expert::collect_demonstrations, tasks, EnvParams};

fn main() {
    let dir = std::env::temp_dir().join("flowmot_demo_episodes");
    let params = EnvParams::default();
    for name in tasks::ALL_TASKS {
        let task = tasks::by_name(name).unwrap();
        let episodes = collect_demonstrations(&task, &params, 10, 0, 32, 0.012).unwrap();
        let frames: usize = episodes.iter().map(|e| e.len()).sum();
        let lens: Vec<usize> = episodes.iter().map(|e| e.len()).collect();
        println!(
            "{name}: {} episodes, {frames} frames (lengths {:?})",
            episodes.len(),
            lens
        );
        save_episodes(&dir, &episodes).unwrap();
        let reloaded = load_task_episodes(&dir, name).unwrap();
        assert_eq!(reloaded.len(), episodes.len());
        println!("  saved and reloaded from {}", dir.join(name).display());
    }
}
