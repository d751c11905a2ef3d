//! Closed-loop losses, reverse-mode gradients, Adam with projection, and the
//! receding-horizon open-loop baseline.

mod adam;
mod loss;
mod rho;
mod rollout;
mod solve;

pub use adam::Adam;
pub use loss::{barrier, Circle, LossSpec};
pub use rho::{open_loop_loss_grad, shift_plan, solve_rho_step, RhoConfig, RhoSolution};
pub use rollout::{advance, batch_loss, bptt_gradient, loss_and_gradient, rollout_and_loss, RolloutState};
pub use solve::{sample_batch, solve_update_problem, write_train_log, TrainConfig, TrainRecord, UpdateSolution};
