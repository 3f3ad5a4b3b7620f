//! NDJSON framing: one JSON object per LF-terminated line, capped at 16 MiB.

use super::{ProtocolError, ProtocolMessage};

/// Maximum serialized message size, excluding the trailing newline.
pub const MAX_FRAME_BYTES: usize = 16 * 1024 * 1024;

/// Serialize a message into one newline-terminated frame.
pub fn frame_message(msg: &ProtocolMessage) -> Result<Vec<u8>, ProtocolError> {
    let mut bytes =
        serde_json::to_vec(msg).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if bytes.len() > MAX_FRAME_BYTES {
        return Err(ProtocolError::Oversize(bytes.len()));
    }
    bytes.push(b'\n');
    Ok(bytes)
}

/// Parse one frame. The trailing newline is optional; anything else that is
/// not exactly one JSON object is rejected.
pub fn parse_message(frame: &[u8]) -> Result<ProtocolMessage, ProtocolError> {
    let line = frame.strip_suffix(b"\n").unwrap_or(frame);
    if line.len() > MAX_FRAME_BYTES {
        return Err(ProtocolError::Oversize(line.len()));
    }
    if line.contains(&b'\n') {
        return Err(ProtocolError::Malformed(
            "frame contains an embedded newline".into(),
        ));
    }
    serde_json::from_slice(line).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{MessageBody, PROTOCOL_VERSION};

    fn hello() -> ProtocolMessage {
        ProtocolMessage {
            body: MessageBody::Hello {
                site_id: "it".into(),
                protocol_version: PROTOCOL_VERSION,
            },
            message_id: 7,
        }
    }

    #[test]
    fn frame_round_trips() {
        let msg = hello();
        let frame = frame_message(&msg).unwrap();
        assert_eq!(frame.last(), Some(&b'\n'));
        assert_eq!(parse_message(&frame).unwrap(), msg);
        // Also without the newline.
        assert_eq!(parse_message(&frame[..frame.len() - 1]).unwrap(), msg);
    }

    #[test]
    fn garbage_is_malformed() {
        assert!(matches!(
            parse_message(b"not json\n"),
            Err(ProtocolError::Malformed(_))
        ));
        assert!(matches!(
            parse_message(b"{\"variant\":\"NoSuch\"}\n"),
            Err(ProtocolError::Malformed(_))
        ));
        assert!(matches!(
            parse_message(b"{}\n{}\n"),
            Err(ProtocolError::Malformed(_))
        ));
    }

    #[test]
    fn oversize_is_rejected() {
        let msg = ProtocolMessage {
            body: MessageBody::ErrorMsg {
                code: "x".into(),
                detail: "y".repeat(MAX_FRAME_BYTES),
            },
            message_id: 0,
        };
        assert!(matches!(
            frame_message(&msg),
            Err(ProtocolError::Oversize(_))
        ));
        let big = vec![b'a'; MAX_FRAME_BYTES + 1];
        assert!(matches!(
            parse_message(&big),
            Err(ProtocolError::Oversize(_))
        ));
    }
}
