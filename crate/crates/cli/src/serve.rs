//! `/ws` endpoint streaming frames to consoles and forwarding their commands.

use std::net::SocketAddr;
use std::sync::mpsc as std_mpsc;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use ergoswarm::uibridge::{
    grid_reply, parse_client, validate_points, BridgeObserver, ClientMessage, CommandRequest, LatestGrids,
    ServerMessage,
};
use tokio::net::{TcpListener, ToSocketAddrs};
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;

pub type LiveObserver = BridgeObserver<Box<dyn FnMut(u64, Arc<str>) + Send>>;

struct AppState {
    hello: Arc<str>,
    frames: watch::Receiver<Option<Arc<str>>>,
    commands: std_mpsc::Sender<CommandRequest>,
    latest: LatestGrids,
    clients: watch::Sender<usize>,
    stop: watch::Receiver<bool>,
}

/// A running bridge server.
pub struct Bridge {
    addr: SocketAddr,
    clients: watch::Receiver<usize>,
    stop: watch::Sender<bool>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl Bridge {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn client_count(&self) -> usize {
        *self.clients.borrow()
    }

    pub async fn wait_for_clients(&self, n: usize) {
        let mut rx = self.clients.clone();
        let _ = rx.wait_for(|&c| c >= n).await;
    }

    /// Closes every session and stops the server.
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        self.stop.send_replace(true);
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task.await.map_err(std::io::Error::other)?
    }
}

/// Binds the server and returns it with the observer that feeds it.
///
/// Sessions outlive the run; once the observer is dropped, commands are refused.
pub async fn start(addr: impl ToSocketAddrs, hello: &ServerMessage) -> std::io::Result<(Bridge, LiveObserver)> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (frame_tx, frame_rx) = watch::channel(None);
    let (cmd_tx, cmd_rx) = std_mpsc::channel();
    let (clients_tx, clients_rx) = watch::channel(0);
    let latest = LatestGrids::default();
    let (stop_tx, stop_rx) = watch::channel(false);
    let state = Arc::new(AppState {
        hello: Arc::from(hello.to_json()),
        frames: frame_rx,
        commands: cmd_tx,
        latest: latest.clone(),
        clients: clients_tx,
        stop: stop_rx,
    });
    let app = Router::new().route("/ws", get(upgrade)).with_state(state);
    let (down_tx, down_rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = down_rx.await;
            })
            .await
    });
    let publish: Box<dyn FnMut(u64, Arc<str>) + Send> = Box::new(move |_tick, json| {
        frame_tx.send_replace(Some(json));
    });
    let observer = BridgeObserver::new(cmd_rx, latest, publish);
    Ok((
        Bridge {
            addr,
            clients: clients_rx,
            stop: stop_tx,
            shutdown: Some(down_tx),
            task,
        },
        observer,
    ))
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| session(socket, state))
}

async fn session(mut socket: WebSocket, state: Arc<AppState>) {
    state.clients.send_modify(|n| *n += 1);
    if let Err(e) = converse(&mut socket, &state).await {
        log::debug!("session ended: {e}");
    }
    state.clients.send_modify(|n| *n -= 1);
}

async fn send(socket: &mut WebSocket, text: &str) -> Result<(), axum::Error> {
    socket.send(Message::Text(text.into())).await
}

async fn converse(socket: &mut WebSocket, state: &AppState) -> Result<(), axum::Error> {
    send(socket, &state.hello).await?;
    let mut frames = state.frames.clone();
    let current = frames.borrow_and_update().clone();
    if let Some(f) = current {
        send(socket, &f).await?;
    }
    let (reply_tx, mut replies) = mpsc::unbounded_channel::<ServerMessage>();
    let mut stop = state.stop.clone();
    let mut running = true;
    loop {
        tokio::select! {
            biased;
            _ = async { stop.wait_for(|&s| s).await.is_ok() } => break,
            Some(reply) = replies.recv() => send(socket, &reply.to_json()).await?,
            changed = frames.changed(), if running => {
                if changed.is_err() {
                    running = false;
                    continue;
                }
                let f = frames.borrow_and_update().clone();
                if let Some(f) = f {
                    send(socket, &f).await?;
                }
            }
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => handle(text.as_str(), state, &reply_tx),
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
        }
    }
    let _ = socket.send(Message::Close(None)).await;
    Ok(())
}

fn handle(text: &str, state: &AppState, reply: &mpsc::UnboundedSender<ServerMessage>) {
    let msg = match parse_client(text) {
        Ok(m) => m,
        Err(e) => {
            let _ = reply.send(e);
            return;
        }
    };
    match msg {
        ClientMessage::Command { points, nonce } => match validate_points(&points) {
            Err(r) => {
                let _ = reply.send(r.into_message(Some(nonce)));
            }
            Ok(points) => {
                let tx = reply.clone();
                let req = CommandRequest {
                    nonce: nonce.clone(),
                    points,
                    reply: Box::new(move |m| {
                        let _ = tx.send(m);
                    }),
                };
                if state.commands.send(req).is_err() {
                    let _ = reply.send(ServerMessage::error(Some(nonce), "simulation finished"));
                }
            }
        },
        ClientMessage::GridRequest { kind } => {
            let _ = reply.send(grid_reply(&state.latest, kind));
        }
    }
}
