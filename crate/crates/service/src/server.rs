//! WebSocket endpoint.
//!
//! `GET /ws` upgrades to a session connection: the first client frame must
//! be `hello`; the service answers with `snapshot` (or `refused`) and then
//! streams `state`, `plan_preview`, `metrics`, `event`, `ack` and
//! `heartbeat` frames. `GET /schema` serves the message schema and
//! `GET /health` the number of live sessions.

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use tokio::net::TcpListener;
use tokio::time::{sleep_until, timeout, Instant};

use crate::hub::{Attachment, Hub};
use crate::protocol::{decode_inbound, Envelope, Inbound, NO_SESSION};

/// JSON schema of every frame exchanged on `/ws`.
pub const SESSION_SCHEMA: &str = include_str!("../../../schema/session.schema.json");

pub fn router(hub: Hub) -> Router {
    Router::new()
        .route("/ws", get(upgrade))
        .route("/schema", get(schema))
        .route("/health", get(health))
        .with_state(hub)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, hub: Hub) -> std::io::Result<()> {
    axum::serve(listener, router(hub)).await
}

async fn schema() -> Response {
    (
        [(header::CONTENT_TYPE, "application/schema+json")],
        SESSION_SCHEMA,
    )
        .into_response()
}

async fn health(State(hub): State<Hub>) -> Response {
    Json(serde_json::json!({ "live_sessions": hub.live_sessions() })).into_response()
}

async fn upgrade(ws: WebSocketUpgrade, State(hub): State<Hub>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, hub))
}

async fn send(socket: &mut WebSocket, msg: &Envelope) -> bool {
    socket
        .send(Message::Text(msg.to_json().into()))
        .await
        .is_ok()
}

async fn first_text(socket: &mut WebSocket) -> Option<String> {
    while let Some(Ok(msg)) = socket.recv().await {
        match msg {
            Message::Text(t) => return Some(t.to_string()),
            Message::Binary(b) => return Some(String::from_utf8_lossy(&b).into_owned()),
            Message::Close(_) => return None,
            Message::Ping(_) | Message::Pong(_) => {}
        }
    }
    None
}

async fn handshake(socket: &mut WebSocket, hub: &Hub) -> Option<Attachment> {
    let idle = hub.config().idle_timeout;
    let text = timeout(idle, first_text(socket)).await.ok().flatten()?;
    let result = match decode_inbound(&text) {
        Ok(frame) => match frame.message {
            Inbound::Hello { resume: None } => hub.open().await,
            Inbound::Hello { resume: Some(id) } => hub.resume(id).await,
            other => {
                let reason = format!("first frame must be hello, got {}", other.kind());
                send(socket, &Envelope::refused(NO_SESSION, reason)).await;
                return None;
            }
        },
        Err(e) => {
            send(
                socket,
                &Envelope::refused(NO_SESSION, format!("first frame must be hello: {e}")),
            )
            .await;
            return None;
        }
    };
    match result {
        Ok(att) => Some(att),
        Err(refusal) => {
            send(socket, &refusal.to_envelope()).await;
            None
        }
    }
}

async fn connection(mut socket: WebSocket, hub: Hub) {
    let Some(mut att) = handshake(&mut socket, &hub).await else {
        let _ = socket.send(Message::Close(None)).await;
        return;
    };
    if !send(&mut socket, &att.snapshot).await {
        return;
    }
    let idle = hub.config().idle_timeout;
    let mut deadline = Instant::now() + idle;
    let mut outs = att
        .outputs
        .take()
        .expect("fresh attachment holds its outputs");
    loop {
        let outgoing = tokio::select! {
            inbound = socket.recv() => {
                match inbound {
                    Some(Ok(Message::Text(t))) => {
                        att.send_text(t.to_string());
                    }
                    Some(Ok(Message::Binary(b))) => {
                        att.send_text(String::from_utf8_lossy(&b).into_owned());
                    }
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => {}
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                }
                deadline = Instant::now() + idle;
                None
            }
            Ok(()) = outs.state.changed() => outs.state.borrow_and_update().clone(),
            Ok(()) = outs.preview.changed() => outs.preview.borrow_and_update().clone(),
            Some(m) = outs.metrics.recv() => Some(m),
            Some(m) = outs.control.recv() => Some(m),
            _ = sleep_until(deadline) => break,
        };
        if let Some(msg) = outgoing {
            if !send(&mut socket, &msg).await {
                break;
            }
        }
    }
    att.outputs = Some(outs);
    let _ = socket.send(Message::Close(None)).await;
}
