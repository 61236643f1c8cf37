use std::process::{Command, Output};

fn liqgame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liqgame")).args(args).env_remove("LIQGAME_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn header(o: &Output) -> String {
    stdout(o).split("\r\n").next().unwrap().to_string()
}

#[test]
fn mfg_caption_example() {
    let o = liqgame(&[
        "mfg",
        "--eta",
        "0.1",
        "--rho",
        "0.2",
        "--lambda",
        "0.3",
        "--beta",
        "1.1",
        "--gamma",
        "1",
        "--alpha",
        "1.05",
        "--T",
        "5",
        "--x",
        "1",
        "--mean-x0",
        "1.5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(header(&o), "t,mean_x,x,mean_y,mean_c,mean_xi,xi");
    let out = stdout(&o);
    assert!(out.ends_with("\r\n"));
    assert_eq!(out.matches("\r\n").count(), 1002);
    assert!(!out.replace("\r\n", "").contains('\n'));
    assert_eq!(stderr(&o).lines().count(), 1);
    assert!(stderr(&o).starts_with("mfg: ansatz_residual="));
}

#[test]
fn two_player_columns() {
    let o = liqgame(&["two", "--gamma", "1", "--x1", "1", "--x2", "0"]);
    assert!(o.status.success());
    assert!(header(&o).starts_with("t,x1,x2,"));
    let first: Vec<String> = stdout(&o).split("\r\n").nth(1).unwrap().split(',').map(String::from).collect();
    assert_eq!(&first[..3], ["0", "1", "0"]);
}

#[test]
fn check_reports_without_failing() {
    let o = liqgame(&["check", "--gamma", "50"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("holds_assumption_iii,false\r\n"));
}

#[test]
fn fixed_headers() {
    let o = liqgame(&["hawkes", "--T", "1"]);
    assert_eq!(header(&o), "time,side");
    let o = liqgame(&["verify", "--trials", "2"]);
    assert_eq!(header(&o), "trial,player,gap,amplitude");
    let o = liqgame(&["converge", "--n-list", "2,4", "--replications", "1", "--steps", "100"]);
    assert_eq!(header(&o), "N,replication,strategy_l2_error,state_sup_error");
}

#[test]
fn config_errors_exit_2() {
    for args in [
        vec!["single", "--alpha", "1.2"],
        vec!["single", "--penalty", "plenty"],
        vec!["single", "--steps", "0"],
        vec!["nplayer"],
        vec!["sweep-n", "--penalties", "100,10"],
        vec!["single", "--config", "/nonexistent/config.json"],
        vec!["check", "--regime", "sideways"],
    ] {
        let o = liqgame(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("config error:"), "{args:?}");
    }
}

#[test]
fn numeric_failure_exit_3() {
    let o = liqgame(&["hawkes", "--mu", "1e10"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("numeric failure [HawkesError::IntensityOverflow]"));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = std::env::temp_dir().join(format!("liqgame-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.json");
    std::fs::write(&cfg, r#"{"subcommand": "single", "alpha": 0.6, "gamma": 0.1, "steps": 200}"#).unwrap();
    let from_file = liqgame(&["single", "--config", cfg.to_str().unwrap()]);
    let by_flags = liqgame(&["single", "--alpha", "0.6", "--gamma", "0.1", "--steps", "200"]);
    assert!(from_file.status.success());
    assert_eq!(from_file.stdout, by_flags.stdout);
    let overridden = liqgame(&["single", "--config", cfg.to_str().unwrap(), "--steps", "100"]);
    assert_eq!(stdout(&overridden).matches("\r\n").count(), 102);
    let wrong = liqgame(&["two", "--config", cfg.to_str().unwrap()]);
    assert_eq!(wrong.status.code(), Some(2));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn seed_env_fallback() {
    let run = |env: Option<&str>, args: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_liqgame"));
        c.args(args).env_remove("LIQGAME_SEED");
        if let Some(v) = env {
            c.env("LIQGAME_SEED", v);
        }
        c.output().unwrap()
    };
    let env7 = run(Some("7"), &["hawkes"]);
    let flag7 = run(None, &["hawkes", "--seed", "7"]);
    let other = run(None, &["hawkes", "--seed", "8"]);
    assert_eq!(env7.stdout, flag7.stdout);
    assert_ne!(env7.stdout, other.stdout);
    // flag wins over the environment
    assert_eq!(run(Some("7"), &["hawkes", "--seed", "8"]).stdout, other.stdout);
    assert_eq!(run(Some("seven"), &["hawkes"]).status.code(), Some(2));
}

#[test]
fn figures_writes_six_series() {
    let dir = std::env::temp_dir().join(format!("liqgame-fig-test-{}", std::process::id()));
    let o = liqgame(&["figures", "--steps", "100", "--output", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut names: Vec<String> =
        std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(
        names,
        [
            "fig1_gamma_0.1.csv",
            "fig1_gamma_1.csv",
            "fig2_alpha.csv",
            "fig2_gamma.csv",
            "fig3_gamma_0.1.csv",
            "fig3_gamma_1.csv"
        ]
    );
    let fig3 = std::fs::read_to_string(dir.join("fig3_gamma_1.csv")).unwrap();
    assert!(fig3.starts_with("t,x1,x2\r\n"));
    std::fs::remove_dir_all(dir).ok();
}
