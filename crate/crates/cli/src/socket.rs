//! WebSocket front end for the serving loop. The simulation runs on the
//! calling thread; one I/O thread per client moves text messages between
//! the socket and a pair of channels.

use std::io::{ErrorKind, Write as _};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::mpsc::{channel, Receiver, Sender, TryRecvError};
use std::thread;
use std::time::Duration;

use anyhow::Context;
use footgait::config::RunConfig;
use footgait::nn::Checkpoint;
use footgait::serve::{run_loop, Pacer, ServeSession};
use footgait::td2td::ReachabilityModel;
use log::{info, warn};
use tungstenite::{Message, WebSocket};

use crate::commands::{build_env, load_actor};

pub fn serve(cfg: &RunConfig, policy_path: &Path, model_path: Option<&Path>, max_clients: Option<usize>) -> anyhow::Result<()> {
    let env = build_env(cfg)?;
    let (actor, _) = load_actor(policy_path, &env)?;
    let model = match model_path {
        Some(p) => {
            let ck = Checkpoint::load(p).with_context(|| format!("loading model {}", p.display()))?;
            Some(ReachabilityModel::from_checkpoint(&ck)?)
        }
        None => None,
    };
    let mut session = ServeSession::new(env, Box::new(actor), model, cfg.env.sim.policy_dt, cfg.seed)?;
    let period = Duration::from_secs_f64(cfg.serve.frame_period_ms / 1000.0);
    let realtime = !cfg.serve.faster_than_realtime;

    let listener = TcpListener::bind(("127.0.0.1", cfg.serve.port)).context("binding serve port")?;
    let addr = listener.local_addr()?;
    println!("listening on ws://{addr}");
    std::io::stdout().flush()?;

    let stop = AtomicBool::new(false);
    let mut clients = 0;
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        stream.set_nodelay(true)?;
        let ws = match tungstenite::accept(stream) {
            Ok(ws) => ws,
            Err(e) => {
                warn!("handshake with {peer} failed: {e}");
                continue;
            }
        };
        info!("client {peer} connected");
        let (to_sim, inbox) = channel();
        let (outbox, from_sim) = channel();
        outbox.send(session.hello().to_json()).ok();
        let io = thread::spawn(move || pump(ws, to_sim, from_sim));
        let mut pacer = Pacer::new(period, realtime);
        let exit = run_loop(&mut session, &mut pacer, &inbox, &outbox, &stop, None);
        drop(outbox);
        io.join().ok();
        let exit = exit?;
        let jitter = pacer.stats();
        info!(
            "client {peer} left ({exit:?}); {} frames, period {:.2} ms ± {:.2} ms, p99 deviation {:.1}%",
            jitter.count + 1,
            1e3 * jitter.mean,
            1e3 * jitter.std,
            100.0 * jitter.relative_jitter()
        );
        clients += 1;
        if max_clients.is_some_and(|m| clients >= m) {
            break;
        }
    }
    Ok(())
}

fn would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if io.kind() == ErrorKind::WouldBlock)
}

/// Moves messages until either side goes away.
fn pump(mut ws: WebSocket<TcpStream>, to_sim: Sender<String>, from_sim: Receiver<String>) {
    if let Err(e) = ws.get_mut().set_nonblocking(true) {
        warn!("socket setup failed: {e}");
        return;
    }
    loop {
        let mut idle = true;
        match ws.read() {
            Ok(Message::Text(text)) => {
                idle = false;
                if to_sim.send(text.to_string()).is_err() {
                    break;
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => idle = false,
            Err(e) if would_block(&e) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
            Err(e) => {
                warn!("read failed: {e}");
                break;
            }
        }
        loop {
            match from_sim.try_recv() {
                Ok(text) => {
                    idle = false;
                    match ws.write(Message::text(text)) {
                        Ok(()) => {}
                        Err(e) if would_block(&e) => {}
                        Err(_) => return,
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    ws.close(None).ok();
                    ws.flush().ok();
                    return;
                }
            }
        }
        match ws.flush() {
            Ok(()) => {}
            Err(e) if would_block(&e) => {}
            Err(_) => break,
        }
        if idle {
            thread::sleep(Duration::from_millis(1));
        }
    }
}
