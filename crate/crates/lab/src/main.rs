use bubblescope_lab::server::{router, AppState, DEFAULT_BIND, ENV_BIND};

#[tokio::main]
async fn main() {
    let bind = std::env::var(ENV_BIND).unwrap_or_else(|_| DEFAULT_BIND.to_string());
    let listener = match tokio::net::TcpListener::bind(&bind).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("bubblescope-lab: cannot bind {bind}: {e}");
            std::process::exit(1);
        }
    };
    eprintln!("bubblescope-lab listening on {bind}");
    let app = router(AppState::from_env());
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
        eprintln!("bubblescope-lab: {e}");
        std::process::exit(1);
    }
}
