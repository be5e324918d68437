//! The command-line pipeline on a tiny scalar config in a temporary directory.

use incstab::cli::run_from_args;

const CONFIG: &str = r#"
name = "tiny"
seed = 3

[plant]
benchmark = "scalar"

[sampling]
eps_x = 0.05
eps_w = 0.1
audit_trials = 20000

[train]
eps = 0.1
epochs = 200
batch_size = 128
learning_rate = 0.001
check_every = 100

[train.weights]
c0 = 1.0
c1 = 1.0
c2 = 1.0
c3 = 1.0
c4 = 1.0
cl1 = 0.0001
cl2 = 0.0001
cv = 30.0

[train.bundle]
k = [1e-5, 0.5, 1e-3, 0.01]
gamma = [2.0, 2.0, 2.0, 2.0]
k_h = 1.0

[train.lip_targets]
lyapunov = 1.0
controller = 20.0
barrier = 1.0

[train.arch]
v_form = "squared"
v_hidden = [16]
v_activation = "tanh"
g_hidden = [8]
g_activation = "tanh"
g_clamp = [-1.0, 1.0]

[simulate]
steps = 500
pairs = 20
rollouts = 50

[[simulate.scenarios]]
name = "pair"
x0 = [-1.0]
x0_hat = [1.0]
signal = { kind = "constant", value = 0.2 }
"#;

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let cfg = tmp.path().join("tiny.toml");
    std::fs::write(&cfg, CONFIG).expect("write config");
    let out = tmp.path().join("run");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    for cmd in ["sample", "train", "verify", "simulate"] {
        println!("$ incstab {cmd} --config {c} --out {o}");
        let code = run_from_args(["incstab", "--threads", "2", cmd, "--config", c, "--out", o]);
        println!("exit {code}\n");
    }
    run_from_args(["incstab", "report", o]);
}
