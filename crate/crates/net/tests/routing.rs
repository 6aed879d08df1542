//! Broker routing conformance: exact-match delivery, multi-queue fan-out,
//! unroutable drops, per-queue FIFO, auth rejection, and redelivery.

use std::time::Duration;

use fedtp_core::nn::{init_kaiming, mlp_spec};
use fedtp_core::Model;
use fedtp_net::{
    broker_serve, BrokerClient, CredentialStore, Sender, WeightMessage, WireModel,
    EXCHANGE_TO_CLIENTS, EXCHANGE_TO_SERVER,
};

fn creds() -> CredentialStore {
    CredentialStore::new().with_user("worker", "secret")
}

fn msg(round: u32, key: &str) -> WeightMessage {
    let model: Model = init_kaiming(&mlp_spec(3, &[2], 2), 1, round as u64).unwrap();
    WeightMessage {
        round,
        routing_key: key.to_string(),
        sender: Sender::Server,
        n_k: None,
        payload: WireModel::from_model(&model),
        hyperparams: None,
    }
}

fn connect(addr: std::net::SocketAddr) -> BrokerClient {
    BrokerClient::connect(&addr.to_string(), "worker", "secret").unwrap()
}

#[test]
fn exact_match_fan_out_to_both_bound_queues() {
    let broker = broker_serve("127.0.0.1:0", creds()).unwrap();
    let mut publisher = connect(broker.addr());
    let mut c1 = connect(broker.addr());
    let mut c2 = connect(broker.addr());
    let mut other = connect(broker.addr());

    c1.declare_queue("Client1").unwrap();
    c1.bind(EXCHANGE_TO_CLIENTS, "Client1", "Domain F").unwrap();
    c1.subscribe("Client1").unwrap();
    c2.declare_queue("Client2").unwrap();
    c2.bind(EXCHANGE_TO_CLIENTS, "Client2", "Domain F").unwrap();
    c2.subscribe("Client2").unwrap();
    other.declare_queue("Client3").unwrap();
    other
        .bind(EXCHANGE_TO_CLIENTS, "Client3", "Domain H")
        .unwrap();
    other.subscribe("Client3").unwrap();

    publisher
        .publish(EXCHANGE_TO_CLIENTS, "Domain F", msg(1, "Domain F"))
        .unwrap();

    let d1 = c1.next_delivery(Duration::from_secs(5)).unwrap();
    let d2 = c2.next_delivery(Duration::from_secs(5)).unwrap();
    assert_eq!(d1.message.round, 1);
    assert_eq!(d2.message.round, 1);
    c1.ack(d1.delivery_id).unwrap();
    c2.ack(d2.delivery_id).unwrap();
    // The queue bound to a different key sees nothing.
    assert!(other.next_delivery(Duration::from_millis(200)).is_err());
}

#[test]
fn unroutable_publish_is_dropped_and_counted() {
    let broker = broker_serve("127.0.0.1:0", creds()).unwrap();
    let mut publisher = connect(broker.addr());
    let before = publisher.stats().unwrap();
    publisher
        .publish(EXCHANGE_TO_CLIENTS, "nobody-listens", msg(1, "nobody-listens"))
        .unwrap();
    let after = publisher.stats().unwrap();
    assert_eq!(after.unroutable, before.unroutable + 1);
    assert_eq!(after.delivered, before.delivered);
}

#[test]
fn per_queue_fifo_order() {
    let broker = broker_serve("127.0.0.1:0", creds()).unwrap();
    let mut publisher = connect(broker.addr());
    let mut consumer = connect(broker.addr());
    consumer.declare_queue("q").unwrap();
    consumer.bind(EXCHANGE_TO_SERVER, "q", "k").unwrap();
    for round in 1..=5 {
        publisher
            .publish(EXCHANGE_TO_SERVER, "k", msg(round, "k"))
            .unwrap();
    }
    // Subscribe after publishing: backlog must drain in publish order.
    consumer.subscribe("q").unwrap();
    for round in 1..=5 {
        let d = consumer.next_delivery(Duration::from_secs(5)).unwrap();
        assert_eq!(d.message.round, round);
        consumer.ack(d.delivery_id).unwrap();
    }
}

#[test]
fn bad_credentials_are_refused() {
    let broker = broker_serve("127.0.0.1:0", creds()).unwrap();
    let addr = broker.addr().to_string();
    assert!(BrokerClient::connect(&addr, "worker", "wrong").is_err());
    assert!(BrokerClient::connect(&addr, "stranger", "secret").is_err());
    assert!(BrokerClient::connect(&addr, "", "").is_err());
    // Correct credentials still work afterwards.
    assert!(BrokerClient::connect(&addr, "worker", "secret").is_ok());
}

#[test]
fn publish_to_unknown_exchange_is_an_error_frame() {
    let broker = broker_serve("127.0.0.1:0", creds()).unwrap();
    let mut c = connect(broker.addr());
    let err = c.publish("no-such-exchange", "k", msg(1, "k")).unwrap_err();
    assert!(err.to_string().contains("unknown exchange"), "{err}");
}

#[test]
fn second_subscriber_is_rejected_while_first_lives() {
    let broker = broker_serve("127.0.0.1:0", creds()).unwrap();
    let mut a = connect(broker.addr());
    let mut b = connect(broker.addr());
    a.declare_queue("q").unwrap();
    a.subscribe("q").unwrap();
    assert!(b.subscribe("q").is_err());
}

#[test]
fn unacked_messages_are_redelivered_after_disconnect() {
    let broker = broker_serve("127.0.0.1:0", creds()).unwrap();
    let mut publisher = connect(broker.addr());
    {
        let mut first = connect(broker.addr());
        first.declare_queue("q").unwrap();
        first.bind(EXCHANGE_TO_SERVER, "q", "k").unwrap();
        first.subscribe("q").unwrap();
        publisher
            .publish(EXCHANGE_TO_SERVER, "k", msg(7, "k"))
            .unwrap();
        let d = first.next_delivery(Duration::from_secs(5)).unwrap();
        assert_eq!(d.message.round, 7);
        // Dropped without ack.
    }
    // Give the broker a moment to notice the disconnect.
    std::thread::sleep(Duration::from_millis(100));
    let mut second = connect(broker.addr());
    second.subscribe("q").unwrap();
    let d = second.next_delivery(Duration::from_secs(5)).unwrap();
    assert_eq!(d.message.round, 7);
    second.ack(d.delivery_id).unwrap();
}

#[test]
fn binding_requires_declared_queue_and_known_exchange() {
    let broker = broker_serve("127.0.0.1:0", creds()).unwrap();
    let mut c = connect(broker.addr());
    assert!(c.bind(EXCHANGE_TO_CLIENTS, "ghost", "k").is_err());
    c.declare_queue("q").unwrap();
    assert!(c.bind("bogus", "q", "k").is_err());
    assert!(c.bind(EXCHANGE_TO_CLIENTS, "q", "k").is_ok());
    // One queue may hold several bindings.
    assert!(c.bind(EXCHANGE_TO_CLIENTS, "q", "k2").is_ok());
    assert!(c.bind(EXCHANGE_TO_SERVER, "q", "k").is_ok());
}
